#include "cfrec/planted.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cfrec/errors.hpp"
#include "cfrec/random.hpp"

namespace cfrec {
namespace {

struct ItemTraits {
  double quality;
  double appeal;
};

constexpr double kBackgroundQualityMax = 0.3;
constexpr double kBackgroundTasteMax = 0.4;

}  // namespace

void PlantedConfig::validate() const {
  if (num_background_users == 0) throw InputError("planted world needs background users");
  if (num_background_items < 2) throw InputError("planted world needs at least two background items");
  if (!(background_density > 0.0 && background_density <= 1.0)) {
    throw InputError("background_density must be in (0, 1]");
  }
  if (num_planted_users == 0) throw InputError("planted world needs at least one planted user");
  if (planted_ratings == 0) throw InputError("planted users need at least one rating besides the anchor");
  if (!(mild_limit > 0.0 && mild_limit <= 1.0)) throw InputError("mild_limit must be in (0, 1]");
  if (!(edgy_quality >= 0.0 && edgy_quality <= 1.0)) throw InputError("edgy_quality must be in [0, 1]");
  if (noise_std < 0.0) throw InputError("noise_std must be >= 0");
}

PlantedInstance planted_generate(const PlantedConfig& cfg) {
  cfg.validate();
  const std::size_t nb = cfg.num_background_items;
  const auto popular = static_cast<std::int64_t>(nb);
  const auto edgy = popular + 1;
  const auto anchor = popular + 2;

  Rng latent(derive_seed(cfg.seed, "planted/latent"));
  std::vector<ItemTraits> items(nb + 3);
  for (std::size_t v = 0; v < nb; ++v) {
    items[v].quality = latent.uniform(0.05, kBackgroundQualityMax);
    // Evenly spaced appeal keeps the mild pool identical across seeds.
    items[v].appeal = -1.0 + 2.0 * (static_cast<double>(v) + 0.5) / static_cast<double>(nb);
  }
  items[static_cast<std::size_t>(popular)] = {0.65, 0.0};
  items[static_cast<std::size_t>(edgy)] = {cfg.edgy_quality, 1.0};
  items[static_cast<std::size_t>(anchor)] = {0.20, 1.0};

  std::vector<std::size_t> mild;
  for (std::size_t v = 0; v < nb; ++v)
    if (std::abs(items[v].appeal) <= cfg.mild_limit) mild.push_back(v);
  if (mild.size() < cfg.planted_ratings) {
    throw InputError("only " + std::to_string(mild.size()) + " mild items for " +
                     std::to_string(cfg.planted_ratings) + " planted ratings; add background items");
  }

  Rng noise(derive_seed(cfg.seed, "planted/noise"));
  Rng pick(derive_seed(cfg.seed, "planted/pick"));
  auto rate = [&](double taste, std::size_t v) {
    const double s = std::clamp(items[v].quality + taste * items[v].appeal, 0.0, 1.0);
    return std::clamp(1.0 + 4.0 * s + cfg.noise_std * noise.normal(), kMinRating, kMaxRating);
  };

  std::vector<RawRating> records;
  std::int64_t next_user = 0;
  for (std::size_t i = 0; i < cfg.num_background_users; ++i, ++next_user) {
    const double taste = latent.uniform(-kBackgroundTasteMax, kBackgroundTasteMax);
    for (std::size_t v = 0; v < items.size(); ++v) {
      // Every background user rates the special items, which pins their factors to the shared axis.
      if (pick.uniform() < cfg.background_density || v >= nb) {
        records.push_back({next_user, static_cast<std::int64_t>(v), rate(taste, v), std::nullopt});
      }
    }
  }

  std::vector<std::int64_t> planted_ext;
  for (std::size_t i = 0; i < cfg.num_planted_users; ++i, ++next_user) {
    auto pool = mild;
    for (std::size_t k = 0; k < cfg.planted_ratings; ++k) std::swap(pool[k], pool[k + pick.below(pool.size() - k)]);
    pool.resize(cfg.planted_ratings);
    std::sort(pool.begin(), pool.end());
    for (auto v : pool) records.push_back({next_user, static_cast<std::int64_t>(v), rate(cfg.planted_taste, v), std::nullopt});
    records.push_back({next_user, anchor, kMaxRating, std::nullopt});
    planted_ext.push_back(next_user);
  }

  PlantedInstance out;
  out.ds = Dataset::from_records(records);
  for (auto ext : {popular, edgy, anchor}) {
    if (!out.ds.item_index(ext)) {
      throw InputError("planted world drew no ratings for a special item; raise background_density");
    }
  }
  out.popular = *out.ds.item_index(popular);
  out.edgy = *out.ds.item_index(edgy);
  out.anchor = *out.ds.item_index(anchor);
  for (auto ext : planted_ext) {
    const auto u = *out.ds.user_index(ext);
    out.planted_users.push_back(u);
    out.planted_positions.push_back(*out.ds.position_of(u, out.anchor));
  }
  return out;
}

}  // namespace cfrec
