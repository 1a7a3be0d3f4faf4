#pragma once

#include <Eigen/Core>
#include <Eigen/Cholesky>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "cfrec/data.hpp"
#include "cfrec/model.hpp"

namespace cfrec {

enum class InfluenceMethod { gradient_based, data_based };
enum class ParamScope { user_block, user_and_items_block };
enum class NConvention { global_n, user_n };

std::string_view to_string(InfluenceMethod m);
std::string_view to_string(ParamScope s);
std::string_view to_string(NConvention n);
InfluenceMethod parse_influence_method(std::string_view s);
ParamScope parse_param_scope(std::string_view s);
NConvention parse_n_convention(std::string_view s);

struct InfluenceConfig {
  InfluenceMethod method = InfluenceMethod::gradient_based;
  ParamScope scope = ParamScope::user_block;
  double damping = 1e-3;
  // When set, the ridge added to H is damping * mean(|diag H|); otherwise damping itself.
  bool relative_damping = true;
  NConvention n_convention = NConvention::user_n;
  std::size_t t2_epochs = 1;               // data_based only
  std::optional<double> continuation_lr;   // data_based only; defaults to the training lr

  void validate() const;
};

/// Estimated effect of removing training interaction z on one prediction.
struct InfluenceEstimate {
  std::size_t z = 0;  // interaction position
  UserIndex user = 0;
  ItemIndex item = 0;
  double i_score = 0.0;     // score - y_minus_z
  double y_minus_z = 0.0;   // estimated score after removal
  InfluenceMethod method = InfluenceMethod::gradient_based;
};

/// Parameter coordinates (indices into Model::params()) of user u's block:
/// the user row, plus the rows of every item in I_u for user_and_items_block.
std::vector<std::size_t> block_coordinates(const Model& model, const Dataset& ds, UserIndex u,
                                           ParamScope scope);

/// Interaction positions whose loss depends on the block.
std::vector<std::size_t> touching_interactions(const Dataset& ds, UserIndex u, ParamScope scope);

struct HessianBlock {
  std::vector<std::size_t> coords;
  Eigen::MatrixXd matrix;       // H + ridge * I
  double ridge = 0.0;           // the ridge actually added
  std::size_t num_touching = 0; // interactions averaged into H
  Eigen::LDLT<Eigen::MatrixXd> factor;
};

/// Average exact Hessian of the squared-error loss over the interactions
/// touching the block, plus the damping ridge. Exactly symmetric.
/// Throws NumericError when the damped matrix is numerically singular
/// (condition estimate above 1e12).
HessianBlock hessian_block(const Model& model, const Dataset& ds, UserIndex u,
                           const InfluenceConfig& cfg);

/// Gradient-based removal estimates for one user, sharing one factorized
/// Hessian block across every z in I_u. Not safe for concurrent use: scoring
/// patches a private scratch copy of the model.
class GradientInfluence {
 public:
  GradientInfluence(const Model& model, const Dataset& ds, UserIndex u, const InfluenceConfig& cfg);

  const HessianBlock& hessian() const { return hessian_; }
  std::size_t n() const { return n_; }

  /// theta_hat - theta over the block coordinates: (1/n) (H + ridge I)^-1 grad L(z).
  Eigen::VectorXd block_update(std::size_t z) const;

  /// Model with the block update applied.
  Model perturbed(std::size_t z) const;

  /// Scores of the given items under the perturbed model.
  std::vector<double> scores_after_removal(std::size_t z, std::span<const ItemIndex> items) const;

 private:
  const Model* model_;
  const Dataset* ds_;
  UserIndex user_;
  InfluenceConfig cfg_;
  HessianBlock hessian_;
  std::size_t n_ = 0;
  mutable Model scratch_;
};

/// Parameters after removing z, estimated by one damped Newton step on z's user block.
Model perturbed_params(const Model& model, const Dataset& ds, std::size_t z,
                       const InfluenceConfig& cfg);

/// Data-based estimate: a copy of model trained cfg.t2_epochs more passes
/// over ds without z.
Model continued_without(const Model& model, const Dataset& ds, std::size_t z,
                        const InfluenceConfig& cfg, const TrainConfig& train_cfg);

/// I(z, score(u, v)) for target item v, where u is z's user.
InfluenceEstimate score_after_removal(const Model& model, const Dataset& ds, std::size_t z,
                                      ItemIndex target, const InfluenceConfig& cfg,
                                      const TrainConfig& train_cfg);

/// Influence of z on the score gap between the two estimates' items.
/// Throws InputError unless both describe the same z, user and method.
double pair_influence(const InfluenceEstimate& est_v, const InfluenceEstimate& est_w);

/// Influence of every z in I_u on a list of items (items[0] is normally rec).
struct InfluenceTable {
  UserIndex user = 0;
  InfluenceMethod method = InfluenceMethod::gradient_based;
  std::vector<ItemIndex> items;
  std::vector<double> base_scores;      // per item
  std::vector<std::size_t> positions;   // I_u, interaction positions
  std::vector<double> i_scores;         // positions.size() x items.size(), row-major

  std::size_t num_points() const { return positions.size(); }
  std::size_t num_items() const { return items.size(); }
  double at(std::size_t point, std::size_t item) const { return i_scores[point * items.size() + item]; }
  double& at(std::size_t point, std::size_t item) { return i_scores[point * items.size() + item]; }
  InfluenceEstimate estimate(std::size_t point, std::size_t item) const;
};

/// Audit dump, one row per (z, target item):
/// `z_user,z_item,target_item,method,i_score,y_minus_z` with external ids.
void write_influence_csv(const InfluenceTable& table, const Dataset& ds, std::ostream& out,
                         bool header = true);

InfluenceTable influence_table(const Model& model, const Dataset& ds, UserIndex u,
                               std::span<const ItemIndex> items, const InfluenceConfig& cfg,
                               const TrainConfig& train_cfg);

}  // namespace cfrec
