#include "cfrec/model.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "cfrec/errors.hpp"
#include "cfrec/random.hpp"

namespace cfrec {
namespace {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<const RowMajorMatrix>;
using MutMatrixMap = Eigen::Map<RowMajorMatrix>;
using VectorMap = Eigen::Map<const Eigen::VectorXd>;
using MutVectorMap = Eigen::Map<Eigen::VectorXd>;

bool uses_sigmoid(const ModelShape& shape) {
  return shape.kind == ModelKind::ncf && shape.rating_scale == RatingScale::unit;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Output link g with score = g(o); returns {g(o), g'(o), g''(o)}.
struct Link {
  double value, first, second;
};

Link apply_link(const ModelShape& shape, double o) {
  if (!uses_sigmoid(shape)) return {o, 1.0, 0.0};
  const double s = sigmoid(o);
  const double d1 = s * (1.0 - s);
  return {s, d1, d1 * (1.0 - 2.0 * s)};
}

void check_ids(const ModelShape& shape, UserIndex u, ItemIndex v) {
  if (u >= shape.num_users || v >= shape.num_items) {
    throw InputError("user or item id out of range: (" + std::to_string(u) + ", " +
                     std::to_string(v) + ")");
  }
}

std::uint64_t order_key(std::uint64_t order_seed, std::size_t epoch, const Interaction& z) {
  const std::uint64_t pair = (static_cast<std::uint64_t>(z.user) << 32) | z.item;
  return splitmix64(order_seed ^ splitmix64(epoch + 1) ^ splitmix64(pair));
}

}  // namespace

std::string_view to_string(ModelKind kind) { return kind == ModelKind::ncf ? "ncf" : "fm"; }

std::string_view to_string(RatingScale scale) {
  return scale == RatingScale::raw ? "raw" : "unit";
}

ModelKind parse_model_kind(std::string_view s) {
  if (s == "ncf") return ModelKind::ncf;
  if (s == "fm") return ModelKind::fm;
  throw InputError("unknown model kind '" + std::string(s) + "' (expected ncf or fm)");
}

RatingScale parse_rating_scale(std::string_view s) {
  if (s == "raw") return RatingScale::raw;
  if (s == "unit") return RatingScale::unit;
  throw InputError("unknown rating scale '" + std::string(s) + "' (expected raw or unit)");
}

void TrainConfig::validate() const {
  if (d < 1) throw InputError("embedding dimension must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw InputError("learning rate must be finite and >= 0");
  if (epochs < 1) throw InputError("epochs must be >= 1");
  if (batch_size < 1) throw InputError("batch size must be >= 1");
  for (auto w : hidden_widths) {
    if (w < 1) throw InputError("hidden widths must be >= 1");
  }
}

double scaled_rating(double rating, RatingScale scale) {
  return scale == RatingScale::unit ? (rating - 1.0) / 4.0 : rating;
}

ModelShape ModelShape::make(ModelKind kind, std::size_t num_users, std::size_t num_items,
                            std::size_t d, std::vector<std::size_t> hidden_widths,
                            RatingScale scale) {
  ModelShape s;
  s.kind = kind;
  s.num_users = num_users;
  s.num_items = num_items;
  s.d = d;
  s.rating_scale = scale;
  if (kind == ModelKind::ncf) {
    if (hidden_widths.empty()) hidden_widths = {2 * d, d};
    s.hidden_widths = std::move(hidden_widths);
    s.user_width = s.item_width = d;
  } else {
    s.user_width = s.item_width = d + 1;
  }
  s.shared_offset = num_users * s.user_width + num_items * s.item_width;
  std::size_t offset = s.shared_offset;
  if (kind == ModelKind::ncf) {
    std::size_t in = 2 * d;
    auto add_layer = [&](std::size_t out) {
      LayerShape layer{in, out, offset, offset + in * out};
      offset += in * out + out;
      s.layers.push_back(layer);
      in = out;
    };
    for (auto w : s.hidden_widths) add_layer(w);
    add_layer(1);
  } else {
    offset += 1;  // w0
  }
  s.num_params = offset;
  return s;
}

Model::Model(ModelShape shape, std::vector<double> params)
    : shape_(std::move(shape)), params_(std::move(params)) {
  if (params_.size() != shape_.num_params) {
    throw InputError("parameter count " + std::to_string(params_.size()) +
                     " does not match model shape (" + std::to_string(shape_.num_params) + ")");
  }
}

bool Model::all_finite() const {
  return std::all_of(params_.begin(), params_.end(), [](double x) { return std::isfinite(x); });
}

Model init_model(ModelKind kind, const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  Model model(ModelShape::make(kind, ds.num_users(), ds.num_items(), cfg.d, cfg.hidden_widths,
                               cfg.rating_scale));
  const auto& shape = model.shape();
  Rng rng(derive_seed(cfg.seed, "init"));
  const double emb = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  // FM rows start with a bias that stays zero.
  const std::size_t first_factor = kind == ModelKind::fm ? 1 : 0;
  for (UserIndex u = 0; u < shape.num_users; ++u) {
    auto row = model.user_row(u);
    for (std::size_t j = first_factor; j < row.size(); ++j) row[j] = rng.uniform(-emb, emb);
  }
  for (ItemIndex v = 0; v < shape.num_items; ++v) {
    auto row = model.item_row(v);
    for (std::size_t j = first_factor; j < row.size(); ++j) row[j] = rng.uniform(-emb, emb);
  }
  auto params = model.params();
  for (const auto& layer : shape.layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
    for (std::size_t i = 0; i < layer.in * layer.out; ++i) {
      params[layer.weight_offset + i] = rng.uniform(-bound, bound);
    }
  }
  return model;
}

GradientEngine::GradientEngine(const ModelShape& shape) : shape_(&shape) {
  if (shape.kind == ModelKind::ncf) {
    activations_.resize(shape.layers.size());
    pre_.resize(shape.layers.size() - 1);
    delta_.resize(shape.layers.size());
    for (std::size_t l = 0; l < shape.layers.size(); ++l) {
      activations_[l].resize(shape.layers[l].in);
      delta_[l].resize(shape.layers[l].in);
      if (l + 1 < shape.layers.size()) pre_[l].resize(shape.layers[l].out);
    }
  }
}

double GradientEngine::run_forward(const Model& model, UserIndex u, ItemIndex v) {
  const auto& shape = *shape_;
  if (shape.kind == ModelKind::fm) {
    const auto ur = model.user_row(u);
    const auto ir = model.item_row(v);
    double dot = 0.0;
    for (std::size_t k = 1; k < ur.size(); ++k) dot += ur[k] * ir[k];
    return model.shared()[0] + ur[0] + ir[0] + dot;
  }
  const auto params = model.params();
  auto& input = activations_[0];
  const auto ur = model.user_row(u);
  const auto ir = model.item_row(v);
  std::copy(ur.begin(), ur.end(), input.begin());
  std::copy(ir.begin(), ir.end(), input.begin() + static_cast<std::ptrdiff_t>(shape.d));

  const std::size_t hidden = shape.layers.size() - 1;
  for (std::size_t l = 0; l < hidden; ++l) {
    const auto& layer = shape.layers[l];
    MatrixMap w(params.data() + layer.weight_offset, static_cast<Eigen::Index>(layer.out),
                static_cast<Eigen::Index>(layer.in));
    VectorMap b(params.data() + layer.bias_offset, static_cast<Eigen::Index>(layer.out));
    VectorMap x(activations_[l].data(), static_cast<Eigen::Index>(layer.in));
    MutVectorMap a(pre_[l].data(), static_cast<Eigen::Index>(layer.out));
    a.noalias() = w * x;
    a += b;
    MutVectorMap h(activations_[l + 1].data(), static_cast<Eigen::Index>(layer.out));
    h = a.cwiseMax(0.0);
  }
  const auto& last = shape.layers.back();
  VectorMap w(params.data() + last.weight_offset, static_cast<Eigen::Index>(last.in));
  VectorMap x(activations_.back().data(), static_cast<Eigen::Index>(last.in));
  return w.dot(x) + params[last.bias_offset];
}

void GradientEngine::run_backward(const Model& model, double delta_out, SampleGrad& out,
                                  bool with_shared) {
  const auto& shape = *shape_;
  out.user.resize(shape.user_width);
  out.item.resize(shape.item_width);
  if (with_shared) {
    out.shared.assign(shape.shared_size(), 0.0);
  }

  if (shape.kind == ModelKind::fm) {
    return;  // compute() fills the FM row gradients directly
  }

  const auto params = model.params();
  const std::size_t num_layers = shape.layers.size();
  const auto& last = shape.layers.back();
  {
    VectorMap w(params.data() + last.weight_offset, static_cast<Eigen::Index>(last.in));
    MutVectorMap dx(delta_[num_layers - 1].data(), static_cast<Eigen::Index>(last.in));
    dx = delta_out * w;
    if (with_shared) {
      VectorMap x(activations_[num_layers - 1].data(), static_cast<Eigen::Index>(last.in));
      MutVectorMap gw(out.shared.data() + (last.weight_offset - shape.shared_offset),
                      static_cast<Eigen::Index>(last.in));
      gw = delta_out * x;
      out.shared[last.bias_offset - shape.shared_offset] = delta_out;
    }
  }
  for (std::size_t l = num_layers - 1; l-- > 0;) {
    const auto& layer = shape.layers[l];
    // delta_[l + 1] holds dL/dh for this layer's output; mask by ReLU.
    auto& dh = delta_[l + 1];
    for (std::size_t j = 0; j < layer.out; ++j) {
      if (pre_[l][j] <= 0.0) dh[j] = 0.0;
    }
    VectorMap da(dh.data(), static_cast<Eigen::Index>(layer.out));
    MatrixMap w(params.data() + layer.weight_offset, static_cast<Eigen::Index>(layer.out),
                static_cast<Eigen::Index>(layer.in));
    if (with_shared) {
      VectorMap x(activations_[l].data(), static_cast<Eigen::Index>(layer.in));
      MutMatrixMap gw(out.shared.data() + (layer.weight_offset - shape.shared_offset),
                      static_cast<Eigen::Index>(layer.out), static_cast<Eigen::Index>(layer.in));
      gw.noalias() = da * x.transpose();
      MutVectorMap gb(out.shared.data() + (layer.bias_offset - shape.shared_offset),
                      static_cast<Eigen::Index>(layer.out));
      gb = da;
    }
    MutVectorMap dx(delta_[l].data(), static_cast<Eigen::Index>(layer.in));
    dx.noalias() = w.transpose() * da;
  }
  std::copy_n(delta_[0].begin(), shape.d, out.user.begin());
  std::copy_n(delta_[0].begin() + static_cast<std::ptrdiff_t>(shape.d), shape.d, out.item.begin());
}

double GradientEngine::score(const Model& model, UserIndex u, ItemIndex v) {
  return apply_link(*shape_, run_forward(model, u, v)).value;
}

void GradientEngine::compute(const Model& model, UserIndex u, ItemIndex v, double target,
                             SampleGrad& out, bool with_shared) {
  const auto& shape = *shape_;
  const double o = run_forward(model, u, v);
  const Link g = apply_link(shape, o);
  const double diff = g.value - target;
  out.score = g.value;
  out.loss = diff * diff;
  const double delta_out = 2.0 * diff * g.first;
  run_backward(model, delta_out, out, with_shared);
  if (shape.kind == ModelKind::fm) {
    const auto ur = model.user_row(u);
    const auto ir = model.item_row(v);
    out.user[0] = delta_out;
    out.item[0] = delta_out;
    for (std::size_t k = 1; k < ur.size(); ++k) {
      out.user[k] = delta_out * ir[k];
      out.item[k] = delta_out * ur[k];
    }
    if (with_shared) out.shared[0] = delta_out;
  }
}

double GradientEngine::sgd_step(Model& model, UserIndex u, ItemIndex v, double target,
                                double lr) {
  const auto& shape = *shape_;
  const double o = run_forward(model, u, v);
  const Link g = apply_link(shape, o);
  const double diff = g.value - target;
  const double delta_out = 2.0 * diff * g.first;
  const double step = lr * delta_out;
  auto params = model.params();

  if (shape.kind == ModelKind::fm) {
    auto ur = model.user_row(u);
    auto ir = model.item_row(v);
    params[shape.shared_offset] -= step;
    ur[0] -= step;
    ir[0] -= step;
    for (std::size_t k = 1; k < ur.size(); ++k) {
      const double uk = ur[k];
      ur[k] -= step * ir[k];
      ir[k] -= step * uk;
    }
    return diff * diff;
  }

  const std::size_t num_layers = shape.layers.size();
  const auto& last = shape.layers.back();
  {
    MutVectorMap w(params.data() + last.weight_offset, static_cast<Eigen::Index>(last.in));
    MutVectorMap dx(delta_[num_layers - 1].data(), static_cast<Eigen::Index>(last.in));
    VectorMap x(activations_[num_layers - 1].data(), static_cast<Eigen::Index>(last.in));
    dx = delta_out * w;
    w -= step * x;
    params[last.bias_offset] -= step;
  }
  for (std::size_t l = num_layers - 1; l-- > 0;) {
    const auto& layer = shape.layers[l];
    auto& dh = delta_[l + 1];
    for (std::size_t j = 0; j < layer.out; ++j) {
      if (pre_[l][j] <= 0.0) dh[j] = 0.0;
    }
    VectorMap da(dh.data(), static_cast<Eigen::Index>(layer.out));
    MutMatrixMap w(params.data() + layer.weight_offset, static_cast<Eigen::Index>(layer.out),
                   static_cast<Eigen::Index>(layer.in));
    MutVectorMap dx(delta_[l].data(), static_cast<Eigen::Index>(layer.in));
    dx.noalias() = w.transpose() * da;
    VectorMap x(activations_[l].data(), static_cast<Eigen::Index>(layer.in));
    w.noalias() -= (lr * da) * x.transpose();
    MutVectorMap b(params.data() + layer.bias_offset, static_cast<Eigen::Index>(layer.out));
    b -= lr * da;
  }
  auto ur = model.user_row(u);
  auto ir = model.item_row(v);
  for (std::size_t j = 0; j < shape.d; ++j) {
    ur[j] -= lr * delta_[0][j];
    ir[j] -= lr * delta_[0][shape.d + j];
  }
  return diff * diff;
}

void GradientEngine::pair_hessian(const Model& model, UserIndex u, ItemIndex v, double target,
                                  std::vector<double>& out) {
  const auto& shape = *shape_;
  const std::size_t uw = shape.user_width;
  const std::size_t p = uw + shape.item_width;
  out.assign(p * p, 0.0);

  const double o = run_forward(model, u, v);
  const Link g = apply_link(shape, o);
  const double residual = g.value - target;

  // J = do/d[user row; item row].
  std::vector<double> jac(p);
  if (shape.kind == ModelKind::ncf) {
    run_backward(model, 1.0, jac_, false);
    std::copy(jac_.user.begin(), jac_.user.end(), jac.begin());
    std::copy(jac_.item.begin(), jac_.item.end(), jac.begin() + static_cast<std::ptrdiff_t>(uw));
  } else {
    const auto ur = model.user_row(u);
    const auto ir = model.item_row(v);
    jac[0] = 1.0;
    jac[uw] = 1.0;
    for (std::size_t k = 1; k < uw; ++k) {
      jac[k] = ir[k];
      jac[uw + k] = ur[k];
    }
  }

  // L = (g(o) - y)^2: d2L = 2 (g'^2 + r g'') J J^T + 2 r g' d2o. ReLU towers have
  // d2o = 0 almost everywhere; FM's d2o couples matching user/item factors.
  const double outer = 2.0 * (g.first * g.first + residual * g.second);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = i; j < p; ++j) out[i * p + j] = outer * jac[i] * jac[j];
  }
  if (shape.kind == ModelKind::fm) {
    const double cross = 2.0 * residual * g.first;
    for (std::size_t k = 1; k < uw; ++k) out[k * p + uw + k] += cross;
  }
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < i; ++j) out[i * p + j] = out[j * p + i];
  }
}

double forward(const Model& model, UserIndex u, ItemIndex v) {
  check_ids(model.shape(), u, v);
  GradientEngine engine(model.shape());
  return engine.score(model, u, v);
}

LossGrad loss_and_grad(const Model& model, const Interaction& z) {
  const auto& shape = model.shape();
  check_ids(shape, z.user, z.item);
  GradientEngine engine(shape);
  SampleGrad g;
  engine.compute(model, z.user, z.item, scaled_rating(z.rating, shape.rating_scale), g, true);
  LossGrad out{g.loss, std::vector<double>(shape.num_params, 0.0)};
  std::copy(g.user.begin(), g.user.end(),
            out.grad.begin() + static_cast<std::ptrdiff_t>(shape.user_offset(z.user)));
  std::copy(g.item.begin(), g.item.end(),
            out.grad.begin() + static_cast<std::ptrdiff_t>(shape.item_offset(z.item)));
  std::copy(g.shared.begin(), g.shared.end(),
            out.grad.begin() + static_cast<std::ptrdiff_t>(shape.shared_offset));
  return out;
}

std::vector<std::size_t> epoch_order(const Dataset& ds, std::uint64_t order_seed,
                                     std::size_t epoch) {
  const auto& zs = ds.interactions();
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed(zs.size());
  for (std::size_t pos = 0; pos < zs.size(); ++pos) {
    keyed[pos] = {order_key(order_seed, epoch, zs[pos]), pos};
  }
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::size_t> order(zs.size());
  for (std::size_t i = 0; i < keyed.size(); ++i) order[i] = keyed[i].second;
  return order;
}

void continue_training(Model& model, const Dataset& ds, const TrainConfig& cfg, double lr,
                       std::size_t epochs, std::uint64_t order_seed,
                       std::vector<double>* mse_trace) {
  const auto& shape = model.shape();
  if (ds.num_users() != shape.num_users || ds.num_items() != shape.num_items) {
    throw InputError("dataset id space does not match the model");
  }
  if (ds.empty()) throw InputError("cannot train on an empty dataset");
  const auto& zs = ds.interactions();
  GradientEngine engine(shape);
  SampleGrad g;

  struct RowUpdate {
    std::size_t offset;
    std::size_t begin;  // into row_grads
    std::size_t width;
  };
  std::vector<double> shared_acc(shape.shared_size(), 0.0);
  std::vector<double> row_grads;
  std::vector<RowUpdate> row_updates;
  auto params = model.params();

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const auto order = epoch_order(ds, order_seed, epoch);
    double loss_sum = 0.0;
    if (cfg.batch_size == 1) {
      for (auto pos : order) {
        const auto& z = zs[pos];
        const double loss = engine.sgd_step(model, z.user, z.item,
                                            scaled_rating(z.rating, shape.rating_scale), lr);
        if (!std::isfinite(loss)) {
          throw NumericError("divergence: non-finite loss in epoch " + std::to_string(epoch + 1));
        }
        loss_sum += loss;
      }
      if (mse_trace) mse_trace->push_back(loss_sum / static_cast<double>(order.size()));
      continue;
    }
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::fill(shared_acc.begin(), shared_acc.end(), 0.0);
      row_grads.clear();
      row_updates.clear();
      for (std::size_t i = start; i < end; ++i) {
        const auto& z = zs[order[i]];
        engine.compute(model, z.user, z.item, scaled_rating(z.rating, shape.rating_scale), g, true);
        if (!std::isfinite(g.loss)) {
          throw NumericError("divergence: non-finite loss in epoch " + std::to_string(epoch + 1));
        }
        loss_sum += g.loss;
        for (std::size_t j = 0; j < shared_acc.size(); ++j) shared_acc[j] += g.shared[j];
        row_updates.push_back({shape.user_offset(z.user), row_grads.size(), g.user.size()});
        row_grads.insert(row_grads.end(), g.user.begin(), g.user.end());
        row_updates.push_back({shape.item_offset(z.item), row_grads.size(), g.item.size()});
        row_grads.insert(row_grads.end(), g.item.begin(), g.item.end());
      }
      const double step = lr / static_cast<double>(end - start);
      for (const auto& r : row_updates) {
        for (std::size_t j = 0; j < r.width; ++j) params[r.offset + j] -= step * row_grads[r.begin + j];
      }
      double* tail = params.data() + shape.shared_offset;
      for (std::size_t j = 0; j < shared_acc.size(); ++j) tail[j] -= step * shared_acc[j];
    }
    if (mse_trace) mse_trace->push_back(loss_sum / static_cast<double>(order.size()));
  }
  if (!model.all_finite()) throw NumericError("divergence: non-finite parameters after training");
}

TrainResult train(ModelKind kind, const Dataset& ds, const TrainConfig& cfg) {
  TrainResult result{init_model(kind, ds, cfg), {}};
  continue_training(result.model, ds, cfg, cfg.lr, cfg.epochs, derive_seed(cfg.seed, "order"),
                    &result.mse_trace);
  return result;
}

std::vector<Prediction> top_k(const Model& model, UserIndex u, const Dataset& ds, std::size_t k,
                              std::span<const ItemIndex> exclude) {
  if (k < 1) throw InputError("K must be >= 1");
  const auto& shape = model.shape();
  if (u >= shape.num_users) throw InputError("user id out of range: " + std::to_string(u));
  std::vector<bool> skip(shape.num_items, false);
  for (auto pos : ds.user_positions(u)) skip[ds.at(pos).item] = true;
  for (auto v : exclude) skip.at(v) = true;

  GradientEngine engine(shape);
  std::vector<Prediction> scored;
  for (ItemIndex v = 0; v < shape.num_items; ++v) {
    if (skip[v]) continue;
    scored.push_back({v, engine.score(model, u, v)});
  }
  if (scored.empty()) {
    throw InputError("user " + std::to_string(u) + " has no uninteracted items");
  }
  const auto better = [](const Prediction& a, const Prediction& b) {
    return a.score > b.score || (a.score == b.score && a.item < b.item);
  };
  const std::size_t n = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(),
                    better);
  scored.resize(n);
  return scored;
}

double mse(const Model& model, const Dataset& ds) {
  if (ds.empty()) throw InputError("mse of an empty dataset");
  const auto& shape = model.shape();
  GradientEngine engine(shape);
  double total = 0.0;
  for (const auto& z : ds.interactions()) {
    const double diff =
        engine.score(model, z.user, z.item) - scaled_rating(z.rating, shape.rating_scale);
    total += diff * diff;
  }
  return total / static_cast<double>(ds.size());
}

}  // namespace cfrec
