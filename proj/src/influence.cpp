#include "cfrec/influence.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>

#include "cfrec/errors.hpp"
#include "cfrec/random.hpp"

namespace cfrec {
namespace {

constexpr double kMaxCondition = 1e12;

std::size_t removal_count(const Dataset& ds, std::size_t num_touching, NConvention n) {
  return n == NConvention::global_n ? ds.size() : num_touching;
}

// Scratch copy of a model that can take a block update and be restored exactly.
class BlockPatch {
 public:
  BlockPatch(Model& model, std::span<const std::size_t> coords) : model_(model), coords_(coords) {
    auto params = model_.params();
    saved_.reserve(coords.size());
    for (auto c : coords) saved_.push_back(params[c]);
  }
  ~BlockPatch() {
    auto params = model_.params();
    for (std::size_t i = 0; i < coords_.size(); ++i) params[coords_[i]] = saved_[i];
  }
  BlockPatch(const BlockPatch&) = delete;
  BlockPatch& operator=(const BlockPatch&) = delete;

  void apply(const Eigen::VectorXd& delta) {
    auto params = model_.params();
    for (std::size_t i = 0; i < coords_.size(); ++i) params[coords_[i]] = saved_[i] + delta[static_cast<Eigen::Index>(i)];
  }

 private:
  Model& model_;
  std::span<const std::size_t> coords_;
  std::vector<double> saved_;
};

}  // namespace

std::string_view to_string(InfluenceMethod m) {
  return m == InfluenceMethod::gradient_based ? "gradient_based" : "data_based";
}
std::string_view to_string(ParamScope s) {
  return s == ParamScope::user_block ? "user_block" : "user_and_items_block";
}
std::string_view to_string(NConvention n) { return n == NConvention::global_n ? "global_n" : "user_n"; }

InfluenceMethod parse_influence_method(std::string_view s) {
  if (s == "gradient" || s == "gradient_based") return InfluenceMethod::gradient_based;
  if (s == "data" || s == "data_based") return InfluenceMethod::data_based;
  throw InputError("unknown influence method '" + std::string(s) + "' (expected gradient or data)");
}
ParamScope parse_param_scope(std::string_view s) {
  if (s == "user_block" || s == "user") return ParamScope::user_block;
  if (s == "user_and_items_block" || s == "user_and_items") return ParamScope::user_and_items_block;
  throw InputError("unknown parameter scope '" + std::string(s) + "'");
}
NConvention parse_n_convention(std::string_view s) {
  if (s == "global_n" || s == "global") return NConvention::global_n;
  if (s == "user_n" || s == "user") return NConvention::user_n;
  throw InputError("unknown n convention '" + std::string(s) + "'");
}

void InfluenceConfig::validate() const {
  if (!(damping >= 0.0) || !std::isfinite(damping)) throw InputError("damping must be finite and >= 0");
  if (method == InfluenceMethod::data_based) {
    if (t2_epochs < 1) throw InputError("data-based estimation needs t2_epochs >= 1");
    if (continuation_lr && !(*continuation_lr > 0.0)) {
      throw InputError("continuation learning rate must be > 0");
    }
  }
}

std::vector<std::size_t> block_coordinates(const Model& model, const Dataset& ds, UserIndex u,
                                           ParamScope scope) {
  const auto& shape = model.shape();
  std::vector<std::size_t> coords;
  for (std::size_t j = 0; j < shape.user_width; ++j) coords.push_back(shape.user_offset(u) + j);
  if (scope == ParamScope::user_and_items_block) {
    for (auto pos : ds.user_positions(u)) {
      const auto base = shape.item_offset(ds.at(pos).item);
      for (std::size_t j = 0; j < shape.item_width; ++j) coords.push_back(base + j);
    }
  }
  return coords;
}

std::vector<std::size_t> touching_interactions(const Dataset& ds, UserIndex u, ParamScope scope) {
  const auto own = ds.user_positions(u);
  std::vector<std::size_t> touching(own.begin(), own.end());
  if (scope == ParamScope::user_and_items_block) {
    for (auto pos : own) {
      for (auto other : ds.item_positions(ds.at(pos).item)) {
        if (ds.at(other).user != u) touching.push_back(other);
      }
    }
    std::sort(touching.begin(), touching.end());
  }
  return touching;
}

HessianBlock hessian_block(const Model& model, const Dataset& ds, UserIndex u,
                           const InfluenceConfig& cfg) {
  cfg.validate();
  const auto& shape = model.shape();
  if (u >= ds.num_users()) throw InputError("user id out of range: " + std::to_string(u));

  HessianBlock out;
  out.coords = block_coordinates(model, ds, u, cfg.scope);
  const auto touching = touching_interactions(ds, u, cfg.scope);
  out.num_touching = touching.size();
  if (touching.empty()) throw InputError("user " + std::to_string(u) + " has no interactions");

  // Local offset of each item row inside the block, if present.
  std::vector<std::ptrdiff_t> item_slot;
  if (cfg.scope == ParamScope::user_and_items_block) {
    item_slot.assign(shape.num_items, -1);
    std::ptrdiff_t next = static_cast<std::ptrdiff_t>(shape.user_width);
    for (auto pos : ds.user_positions(u)) {
      item_slot[ds.at(pos).item] = next;
      next += static_cast<std::ptrdiff_t>(shape.item_width);
    }
  }

  const auto p = static_cast<Eigen::Index>(out.coords.size());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(p, p);
  GradientEngine engine(shape);
  std::vector<double> pair;
  const std::size_t uw = shape.user_width;
  const std::size_t pw = uw + shape.item_width;
  std::vector<std::ptrdiff_t> local(pw);
  for (auto pos : touching) {
    const auto& z = ds.at(pos);
    engine.pair_hessian(model, z.user, z.item, scaled_rating(z.rating, shape.rating_scale), pair);
    const std::ptrdiff_t user_base = z.user == u ? 0 : -1;
    const std::ptrdiff_t item_base = item_slot.empty() ? -1 : item_slot[z.item];
    for (std::size_t a = 0; a < pw; ++a) {
      const bool is_user = a < uw;
      const std::ptrdiff_t base = is_user ? user_base : item_base;
      local[a] = base < 0 ? -1 : base + static_cast<std::ptrdiff_t>(is_user ? a : a - uw);
    }
    for (std::size_t a = 0; a < pw; ++a) {
      if (local[a] < 0) continue;
      for (std::size_t b = 0; b < pw; ++b) {
        if (local[b] < local[a]) continue;  // accumulate the upper triangle only
        h(local[a], local[b]) += pair[a * pw + b];
      }
    }
  }
  h /= static_cast<double>(touching.size());
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < i; ++j) h(i, j) = h(j, i);

  double ridge = cfg.damping;
  if (cfg.relative_damping) {
    const double mean_diag = h.diagonal().cwiseAbs().mean();
    if (mean_diag > 0.0) ridge = cfg.damping * mean_diag;
  }
  h.diagonal().array() += ridge;
  out.ridge = ridge;
  out.matrix = std::move(h);
  out.factor.compute(out.matrix);
  // Eigen's rcond skips exactly-zero pivots, so check the pivot spread too.
  const Eigen::VectorXd pivots = out.factor.vectorD().cwiseAbs();
  const double rcond = out.factor.info() == Eigen::Success ? out.factor.rcond() : 0.0;
  if (!(rcond * kMaxCondition >= 1.0) || !(pivots.minCoeff() * kMaxCondition >= pivots.maxCoeff())) {
    throw NumericError("Hessian block of user " + std::to_string(u) +
                       " is numerically singular (condition estimate > 1e12); "
                       "increase the damping");
  }
  return out;
}

GradientInfluence::GradientInfluence(const Model& model, const Dataset& ds, UserIndex u,
                                     const InfluenceConfig& cfg)
    : model_(&model),
      ds_(&ds),
      user_(u),
      cfg_(cfg),
      hessian_(hessian_block(model, ds, u, cfg)),
      scratch_(model) {
  n_ = removal_count(ds, hessian_.num_touching, cfg.n_convention);
}

Eigen::VectorXd GradientInfluence::block_update(std::size_t z) const {
  const auto& point = ds_->at(z);
  if (point.user != user_) {
    throw InputError("interaction " + std::to_string(z) + " does not belong to user " +
                     std::to_string(user_));
  }
  const auto& shape = model_->shape();
  GradientEngine engine(shape);
  SampleGrad g;
  engine.compute(*model_, point.user, point.item, scaled_rating(point.rating, shape.rating_scale),
                 g, false);

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(hessian_.coords.size()));
  for (std::size_t j = 0; j < shape.user_width; ++j) grad[static_cast<Eigen::Index>(j)] = g.user[j];
  if (cfg_.scope == ParamScope::user_and_items_block) {
    const auto item_base = shape.item_offset(point.item);
    for (std::size_t i = shape.user_width; i < hessian_.coords.size(); i += shape.item_width) {
      if (hessian_.coords[i] != item_base) continue;
      for (std::size_t j = 0; j < shape.item_width; ++j) grad[static_cast<Eigen::Index>(i + j)] = g.item[j];
      break;
    }
  }
  return hessian_.factor.solve(grad) / static_cast<double>(n_);
}

Model GradientInfluence::perturbed(std::size_t z) const {
  const Eigen::VectorXd delta = block_update(z);
  Model out = *model_;
  auto params = out.params();
  for (std::size_t i = 0; i < hessian_.coords.size(); ++i) {
    params[hessian_.coords[i]] += delta[static_cast<Eigen::Index>(i)];
  }
  return out;
}

std::vector<double> GradientInfluence::scores_after_removal(std::size_t z,
                                                            std::span<const ItemIndex> items) const {
  const Eigen::VectorXd delta = block_update(z);
  BlockPatch patch(scratch_, hessian_.coords);
  patch.apply(delta);
  GradientEngine engine(scratch_.shape());
  std::vector<double> scores;
  scores.reserve(items.size());
  for (auto v : items) scores.push_back(engine.score(scratch_, user_, v));
  return scores;
}

Model perturbed_params(const Model& model, const Dataset& ds, std::size_t z,
                       const InfluenceConfig& cfg) {
  return GradientInfluence(model, ds, ds.at(z).user, cfg).perturbed(z);
}

Model continued_without(const Model& model, const Dataset& ds, std::size_t z,
                        const InfluenceConfig& cfg, const TrainConfig& train_cfg) {
  cfg.validate();
  Model out = model;
  const std::size_t removed[] = {z};
  const Dataset reduced = ds.without(removed);
  continue_training(out, reduced, train_cfg, cfg.continuation_lr.value_or(train_cfg.lr),
                    cfg.t2_epochs, derive_seed(train_cfg.seed, "continue"));
  return out;
}

InfluenceEstimate score_after_removal(const Model& model, const Dataset& ds, std::size_t z,
                                      ItemIndex target, const InfluenceConfig& cfg,
                                      const TrainConfig& train_cfg) {
  cfg.validate();
  const auto& point = ds.at(z);
  const double base = forward(model, point.user, target);
  double after = 0.0;
  if (cfg.method == InfluenceMethod::gradient_based) {
    after = forward(perturbed_params(model, ds, z, cfg), point.user, target);
  } else {
    after = forward(continued_without(model, ds, z, cfg, train_cfg), point.user, target);
  }
  return {z, point.user, target, base - after, after, cfg.method};
}

double pair_influence(const InfluenceEstimate& est_v, const InfluenceEstimate& est_w) {
  if (est_v.z != est_w.z || est_v.user != est_w.user || est_v.method != est_w.method) {
    throw InputError("pair influence needs estimates for the same interaction, user and method");
  }
  return est_v.i_score - est_w.i_score;
}

InfluenceEstimate InfluenceTable::estimate(std::size_t point, std::size_t item) const {
  const double score = at(point, item);
  return {positions.at(point), user, items.at(item), score, base_scores.at(item) - score, method};
}

InfluenceTable influence_table(const Model& model, const Dataset& ds, UserIndex u,
                               std::span<const ItemIndex> items, const InfluenceConfig& cfg,
                               const TrainConfig& train_cfg) {
  cfg.validate();
  InfluenceTable table;
  table.user = u;
  table.method = cfg.method;
  table.items.assign(items.begin(), items.end());
  const auto own = ds.user_positions(u);
  table.positions.assign(own.begin(), own.end());
  table.i_scores.assign(table.positions.size() * items.size(), 0.0);

  GradientEngine engine(model.shape());
  for (auto v : items) table.base_scores.push_back(engine.score(model, u, v));

  if (cfg.method == InfluenceMethod::gradient_based) {
    const GradientInfluence gi(model, ds, u, cfg);
    for (std::size_t p = 0; p < table.positions.size(); ++p) {
      const auto after = gi.scores_after_removal(table.positions[p], items);
      for (std::size_t k = 0; k < items.size(); ++k) table.at(p, k) = table.base_scores[k] - after[k];
    }
  } else {
    for (std::size_t p = 0; p < table.positions.size(); ++p) {
      const Model cont = continued_without(model, ds, table.positions[p], cfg, train_cfg);
      GradientEngine cont_engine(cont.shape());
      for (std::size_t k = 0; k < items.size(); ++k) {
        table.at(p, k) = table.base_scores[k] - cont_engine.score(cont, u, items[k]);
      }
    }
  }
  return table;
}

void write_influence_csv(const InfluenceTable& table, const Dataset& ds, std::ostream& out, bool header) {
  if (header) out << "z_user,z_item,target_item,method,i_score,y_minus_z\n";
  char buf[64];
  for (std::size_t p = 0; p < table.num_points(); ++p) {
    const auto& z = ds.at(table.positions[p]);
    for (std::size_t i = 0; i < table.num_items(); ++i) {
      const auto est = table.estimate(p, i);
      out << ds.external_user(z.user) << ',' << ds.external_item(z.item) << ','
          << ds.external_item(table.items[i]) << ',' << to_string(table.method) << ',';
      std::snprintf(buf, sizeof buf, "%.17g", est.i_score);
      out << buf << ',';
      std::snprintf(buf, sizeof buf, "%.17g", est.y_minus_z);
      out << buf << '\n';
    }
  }
}

}  // namespace cfrec
