#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cfrec/data.hpp"

namespace cfrec {

/// Synthetic world with a known cause behind some users' top-1.
///
/// Ratings follow one taste axis plus item quality:
///   rating = 1 + 4 * clamp(q_v + a_u * b_v, 0, 1) + noise,
/// where q_v is quality, b_v in [-1, 1] is how strongly an item appeals to
/// taste a_u. Three items are special:
///   popular  q = 0.65, b = 0   best item for anyone with a_u <= 0.05
///   edgy     q = 0.60, b = 1   beats popular once a_u > 0.05
///   anchor   q = 0.20, b = 1   a 5-star rating here implies a_u = 0.8
/// Planted users lean slightly against the axis (a_u < 0) and rate only mild
/// items, plus the anchor at 5 stars. That one rating pushes their fitted
/// taste positive, so edgy is their top-1; without it, popular takes over.
/// Because the mild ratings pull the other way, the anchor is not fit
/// exactly, which is what lets a first-order estimate see its effect.
/// Background appeals are evenly spaced over [-1, 1], so the mild pool, and
/// with it the anchor's leverage, is the same for every seed. Every
/// background user rates the three special items; otherwise the planted
/// users' 5-star ratings can capture the anchor's factor on their own.
struct PlantedConfig {
  std::size_t num_background_users = 200;
  std::size_t num_background_items = 100;
  double background_density = 0.3;
  std::size_t num_planted_users = 20;
  std::size_t planted_ratings = 22;  // mild items per planted user, besides the anchor
  double planted_taste = -0.3;
  double mild_limit = 0.5;  // planted users only rate items with |b| <= mild_limit
  double edgy_quality = 0.6;
  double noise_std = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PlantedInstance {
  Dataset ds;
  std::vector<UserIndex> planted_users;
  std::vector<std::size_t> planted_positions;  // (planted user, anchor), parallel to planted_users
  ItemIndex anchor = 0;
  ItemIndex edgy = 0;     // expected top-1 of planted users
  ItemIndex popular = 0;  // expected top-1 once the anchor rating is gone
};

PlantedInstance planted_generate(const PlantedConfig& cfg);

}  // namespace cfrec
