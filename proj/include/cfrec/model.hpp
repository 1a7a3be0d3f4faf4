#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfrec/data.hpp"

namespace cfrec {

enum class ModelKind { ncf, fm };
enum class RatingScale { raw, unit };

std::string_view to_string(ModelKind kind);
std::string_view to_string(RatingScale scale);
ModelKind parse_model_kind(std::string_view s);
RatingScale parse_rating_scale(std::string_view s);

struct TrainConfig {
  std::size_t d = 32;
  double lr = 0.05;
  std::size_t epochs = 20;  // one epoch = one pass over every interaction
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden_widths;  // NCF only; empty means {2d, d}
  RatingScale rating_scale = RatingScale::unit;

  void validate() const;
};

/// Rating expressed in the model's target scale: raw 1-5, or (y - 1) / 4.
double scaled_rating(double rating, RatingScale scale);

/// Dense layer of the NCF tower: weights are out x in, row-major.
struct LayerShape {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;

  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

/// Parameter layout shared by both recommenders. All parameters live in one
/// flat vector: a user table (num_users rows), an item table (num_items rows),
/// then a shared tail.
///
///   NCF  user row = embedding (d)     item row = embedding (d)
///        shared   = [W_0, b_0, W_1, b_1, ..., W_L, b_L]
///   FM   user row = [bias, factors (d)]   item row = [bias, factors (d)]
///        shared   = [w0]
struct ModelShape {
  ModelKind kind = ModelKind::ncf;
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::size_t d = 0;
  std::vector<std::size_t> hidden_widths;
  RatingScale rating_scale = RatingScale::unit;

  std::size_t user_width = 0;
  std::size_t item_width = 0;
  std::size_t shared_offset = 0;
  std::size_t num_params = 0;
  std::vector<LayerShape> layers;  // NCF only; the last layer has out == 1

  static ModelShape make(ModelKind kind, std::size_t num_users, std::size_t num_items,
                         std::size_t d, std::vector<std::size_t> hidden_widths,
                         RatingScale scale);

  std::size_t user_offset(UserIndex u) const { return u * user_width; }
  std::size_t item_offset(ItemIndex v) const { return num_users * user_width + v * item_width; }
  std::size_t shared_size() const { return num_params - shared_offset; }

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

/// Trainable parameters of a recommender plus the shape that interprets them.
class Model {
 public:
  Model() = default;
  explicit Model(ModelShape shape) : shape_(std::move(shape)), params_(shape_.num_params, 0.0) {}
  Model(ModelShape shape, std::vector<double> params);

  const ModelShape& shape() const { return shape_; }
  ModelKind kind() const { return shape_.kind; }

  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }

  std::span<const double> user_row(UserIndex u) const {
    return {params_.data() + shape_.user_offset(u), shape_.user_width};
  }
  std::span<double> user_row(UserIndex u) {
    return {params_.data() + shape_.user_offset(u), shape_.user_width};
  }
  std::span<const double> item_row(ItemIndex v) const {
    return {params_.data() + shape_.item_offset(v), shape_.item_width};
  }
  std::span<double> item_row(ItemIndex v) {
    return {params_.data() + shape_.item_offset(v), shape_.item_width};
  }
  std::span<const double> shared() const {
    return std::span<const double>(params_).subspan(shape_.shared_offset);
  }
  std::span<double> shared() { return std::span<double>(params_).subspan(shape_.shared_offset); }

  bool all_finite() const;

  friend bool operator==(const Model&, const Model&) = default;

 private:
  ModelShape shape_;
  std::vector<double> params_;
};

/// Embeddings ~ U[-1/sqrt(d), 1/sqrt(d)], dense weights ~ U[-1/sqrt(fan_in),
/// 1/sqrt(fan_in)], all biases zero. Deterministic in cfg.seed.
Model init_model(ModelKind kind, const Dataset& ds, const TrainConfig& cfg);

/// Preference score for (u, v). Throws InputError on out-of-range ids.
double forward(const Model& model, UserIndex u, ItemIndex v);

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;  // dense, one entry per parameter
};

/// Squared error (score - y)^2 on z and its exact gradient over all parameters.
LossGrad loss_and_grad(const Model& model, const Interaction& z);

/// Gradient of the squared error restricted to the rows a single interaction
/// touches. This is what training and influence estimation consume.
struct SampleGrad {
  double score = 0.0;
  double loss = 0.0;
  std::vector<double> user;    // d/d user row
  std::vector<double> item;    // d/d item row
  std::vector<double> shared;  // d/d shared tail
};

class GradientEngine {
 public:
  explicit GradientEngine(const ModelShape& shape);

  /// Preference score only; no gradient work.
  double score(const Model& model, UserIndex u, ItemIndex v);

  /// Fills out with the loss gradient for one interaction. When with_shared
  /// is false the shared-tail gradient is skipped (cheaper when only the
  /// embedding rows are needed).
  void compute(const Model& model, UserIndex u, ItemIndex v, double target, SampleGrad& out,
               bool with_shared = true);

  /// One plain SGD step on a single interaction, applied in place. Every
  /// update uses gradients at the pre-step parameters. Returns the loss.
  double sgd_step(Model& model, UserIndex u, ItemIndex v, double target, double lr);

  /// Exact Hessian of (score - target)^2 with respect to the concatenated
  /// [user row; item row], row-major, (user_width + item_width)^2 entries.
  void pair_hessian(const Model& model, UserIndex u, ItemIndex v, double target,
                    std::vector<double>& out);

 private:
  // Returns the pre-activation output o (score = g(o)) and caches activations.
  double run_forward(const Model& model, UserIndex u, ItemIndex v);
  // Backpropagates delta_out = dL/do into the input and optionally the tower.
  void run_backward(const Model& model, double delta_out, SampleGrad& out, bool with_shared);

  const ModelShape* shape_;
  std::vector<std::vector<double>> activations_;  // per layer input; [0] is the concat input
  std::vector<std::vector<double>> pre_;          // per hidden layer pre-activation
  std::vector<std::vector<double>> delta_;        // scratch
  SampleGrad jac_;
};

struct TrainResult {
  Model model;
  std::vector<double> mse_trace;  // mean loss over each epoch's updates
};

/// Mini-batch SGD for cfg.epochs passes. The visit order of every epoch is
/// fixed by a keyed hash of (seed, epoch, user, item), so deleting
/// interactions never reorders the ones that remain. Throws NumericError
/// naming the epoch on divergence.
TrainResult train(ModelKind kind, const Dataset& ds, const TrainConfig& cfg);

/// Continues SGD from an existing model for `epochs` more passes over ds at
/// learning rate lr, with visit order keyed by order_seed.
void continue_training(Model& model, const Dataset& ds, const TrainConfig& cfg, double lr,
                       std::size_t epochs, std::uint64_t order_seed,
                       std::vector<double>* mse_trace = nullptr);

/// Epoch visit order (positions into ds.interactions()).
std::vector<std::size_t> epoch_order(const Dataset& ds, std::uint64_t order_seed, std::size_t epoch);

struct Prediction {
  ItemIndex item = 0;
  double score = 0.0;
};

/// Highest-scoring items the user has not interacted with, score descending,
/// ties by ascending item id. Items listed in `exclude` are skipped as well.
std::vector<Prediction> top_k(const Model& model, UserIndex u, const Dataset& ds, std::size_t k,
                              std::span<const ItemIndex> exclude = {});

/// Mean squared error over ds in the model's rating scale.
double mse(const Model& model, const Dataset& ds);

}  // namespace cfrec
