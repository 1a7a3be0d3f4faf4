#include "cfrec/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <string_view>
#include <system_error>

#include "cfrec/errors.hpp"
#include "cfrec/random.hpp"

namespace cfrec {
namespace {

std::uint64_t pair_key(UserIndex u, ItemIndex v) {
  return (static_cast<std::uint64_t>(u) << 32) | v;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  T value{};
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc{} || ptr != end) return std::nullopt;
  return value;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

RawRating parse_record(const std::vector<std::string_view>& f, const std::string& source,
                       std::size_t line_no, bool timestamp_optional) {
  auto user = parse_number<std::int64_t>(f[0]);
  auto item = parse_number<std::int64_t>(f[1]);
  if (!user || !item) throw ParseError(source, line_no, "user and item ids must be integers");
  auto rating = parse_number<double>(f[2]);
  if (!rating || !std::isfinite(*rating)) throw ParseError(source, line_no, "rating is not a number");
  if (*rating < kMinRating || *rating > kMaxRating) {
    throw ParseError(source, line_no, "rating outside [1, 5]");
  }
  RawRating r{*user, *item, *rating, std::nullopt};
  if (!(timestamp_optional && f[3].empty())) {
    auto ts = parse_number<std::int64_t>(f[3]);
    if (!ts) throw ParseError(source, line_no, "timestamp must be an integer");
    r.timestamp = *ts;
  }
  return r;
}

std::string format_double(double x) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

}  // namespace

Dataset::Dataset(std::vector<Interaction> interactions, std::vector<std::int64_t> user_ext,
                 std::vector<std::int64_t> item_ext)
    : interactions_(std::move(interactions)),
      user_ext_(std::move(user_ext)),
      item_ext_(std::move(item_ext)) {
  build_indexes();
}

void Dataset::build_indexes() {
  per_user_.assign(user_ext_.size(), {});
  per_item_.assign(item_ext_.size(), {});
  pair_index_.clear();
  pair_index_.reserve(interactions_.size());
  for (std::size_t pos = 0; pos < interactions_.size(); ++pos) {
    const auto& z = interactions_[pos];
    per_user_[z.user].push_back(pos);
    per_item_[z.item].push_back(pos);
    pair_index_.emplace(pair_key(z.user, z.item), pos);
  }
}

Dataset Dataset::from_records(std::span<const RawRating> records) {
  // Last occurrence of a (user, item) pair wins.
  std::unordered_map<std::int64_t, std::unordered_map<std::int64_t, std::size_t>> last;
  for (std::size_t i = 0; i < records.size(); ++i) last[records[i].user][records[i].item] = i;

  std::vector<std::int64_t> users;
  std::vector<std::int64_t> items;
  for (const auto& r : records) {
    users.push_back(r.user);
    items.push_back(r.item);
  }
  auto dedupe = [](std::vector<std::int64_t>& ids) {
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  };
  dedupe(users);
  dedupe(items);
  auto dense = [](const std::vector<std::int64_t>& ids, std::int64_t ext) {
    return static_cast<std::uint32_t>(std::lower_bound(ids.begin(), ids.end(), ext) - ids.begin());
  };

  std::vector<Interaction> interactions;
  interactions.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (last[r.user][r.item] != i) continue;
    interactions.push_back({dense(users, r.user), dense(items, r.item), r.rating, r.timestamp});
  }
  return Dataset(std::move(interactions), std::move(users), std::move(items));
}

std::optional<std::size_t> Dataset::position_of(UserIndex u, ItemIndex v) const {
  const auto it = pair_index_.find(pair_key(u, v));
  if (it == pair_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<UserIndex> Dataset::user_index(std::int64_t external) const {
  const auto it = std::lower_bound(user_ext_.begin(), user_ext_.end(), external);
  if (it == user_ext_.end() || *it != external) return std::nullopt;
  return static_cast<UserIndex>(it - user_ext_.begin());
}

std::optional<ItemIndex> Dataset::item_index(std::int64_t external) const {
  const auto it = std::lower_bound(item_ext_.begin(), item_ext_.end(), external);
  if (it == item_ext_.end() || *it != external) return std::nullopt;
  return static_cast<ItemIndex>(it - item_ext_.begin());
}

double Dataset::density() const {
  if (num_users() == 0 || num_items() == 0) return 0.0;
  return static_cast<double>(size()) /
         (static_cast<double>(num_users()) * static_cast<double>(num_items()));
}

DatasetStats Dataset::stats() const { return {num_users(), num_items(), size(), density()}; }

Dataset Dataset::without(std::span<const std::size_t> positions) const {
  std::vector<bool> drop(interactions_.size(), false);
  for (auto pos : positions) drop.at(pos) = true;
  std::vector<Interaction> kept;
  kept.reserve(interactions_.size());
  for (std::size_t pos = 0; pos < interactions_.size(); ++pos) {
    if (!drop[pos]) kept.push_back(interactions_[pos]);
  }
  return Dataset(std::move(kept), user_ext_, item_ext_);
}

Dataset parse_movielens(std::istream& in, const std::string& source_name) {
  std::vector<RawRating> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 4) {
      throw ParseError(source_name, line_no,
                       "expected 4 tab-separated fields, got " + std::to_string(fields.size()));
    }
    records.push_back(parse_record(fields, source_name, line_no, false));
  }
  if (records.empty()) throw InputError(source_name + ": no ratings found");
  return Dataset::from_records(records);
}

Dataset parse_movielens(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return parse_movielens(in, path.string());
}

void write_canonical_csv(const Dataset& ds, std::ostream& out) {
  out << "user,item,rating,timestamp\n";
  for (const auto& z : ds.interactions()) {
    out << z.user << ',' << z.item << ',' << format_double(z.rating) << ',';
    if (z.timestamp) out << *z.timestamp;
    out << '\n';
  }
}

void write_canonical_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  write_canonical_csv(ds, out);
}

Dataset parse_canonical_csv(std::istream& in, const std::string& source_name) {
  std::string line;
  if (!std::getline(in, line)) throw InputError(source_name + ": empty file");
  strip_cr(line);
  if (line != "user,item,rating,timestamp") {
    throw ParseError(source_name, 1, "expected header 'user,item,rating,timestamp'");
  }
  std::vector<RawRating> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != 4) {
      throw ParseError(source_name, line_no,
                       "expected 4 comma-separated fields, got " + std::to_string(fields.size()));
    }
    records.push_back(parse_record(fields, source_name, line_no, true));
  }
  if (records.empty()) throw InputError(source_name + ": no ratings found");
  return Dataset::from_records(records);
}

Dataset parse_canonical_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return parse_canonical_csv(in, path.string());
}

Dataset filter_min_actions(const Dataset& ds, std::size_t min_actions) {
  std::vector<RawRating> kept;
  kept.reserve(ds.size());
  for (const auto& z : ds.interactions()) {
    if (ds.user_positions(z.user).size() < min_actions) continue;
    kept.push_back({ds.external_user(z.user), ds.external_item(z.item), z.rating, z.timestamp});
  }
  if (kept.empty()) throw InputError("dataset exhausted by filter");
  // Items without remaining interactions vanish when the id space is rebuilt.
  return Dataset::from_records(kept);
}

void SynthConfig::validate() const {
  if (num_users == 0 || num_items == 0) throw InputError("synthetic dataset needs users and items");
  if (!(density > 0.0 && density <= 1.0)) throw InputError("density must lie in (0, 1]");
  if (!(noise_std >= 0.0)) throw InputError("noise_std must be >= 0");
  if (num_latent_causes == 0) throw InputError("num_latent_causes must be >= 1");
  const double expected = density * static_cast<double>(num_users) * static_cast<double>(num_items);
  if (std::llround(expected) < 1) throw InputError("configuration yields zero interactions");
}

Dataset synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t nu = cfg.num_users;
  const std::size_t ni = cfg.num_items;
  const std::size_t k = cfg.num_latent_causes;

  Rng latent_rng(derive_seed(cfg.seed, "synth/latent"));
  std::vector<double> a(nu * k), b(ni * k);
  for (auto& x : a) x = latent_rng.uniform();
  for (auto& x : b) x = latent_rng.uniform();

  Rng exposure_rng(derive_seed(cfg.seed, "synth/exposure"));
  constexpr double kExposureSigma = 0.5;
  std::vector<double> activity(nu), popularity(ni);
  for (auto& x : activity) x = std::exp(kExposureSigma * exposure_rng.normal());
  for (auto& x : popularity) x = std::exp(kExposureSigma * exposure_rng.normal());

  const double target = cfg.density * static_cast<double>(nu) * static_cast<double>(ni);
  auto expected_count = [&](double c) {
    double total = 0.0;
    for (std::size_t u = 0; u < nu; ++u)
      for (std::size_t v = 0; v < ni; ++v) total += std::min(1.0, c * activity[u] * popularity[v]);
    return total;
  };
  double lo = 0.0, hi = 1.0;
  while (expected_count(hi) < target && hi < 1e12) hi *= 2.0;
  for (int iter = 0; iter < 60; ++iter) {
    const double mid = 0.5 * (lo + hi);
    (expected_count(mid) < target ? lo : hi) = mid;
  }
  const double scale = hi;

  Rng noise_rng(derive_seed(cfg.seed, "synth/noise"));
  auto rating_of = [&](std::size_t u, std::size_t v) {
    double dot = 0.0;
    for (std::size_t j = 0; j < k; ++j) dot += a[u * k + j] * b[v * k + j];
    double r = 1.0 + 4.0 * dot / static_cast<double>(k);
    if (cfg.noise_std > 0.0) r += cfg.noise_std * noise_rng.normal();
    return std::clamp(r, kMinRating, kMaxRating);
  };

  Rng pick_rng(derive_seed(cfg.seed, "synth/pick"));
  std::vector<std::vector<bool>> observed(nu, std::vector<bool>(ni, false));
  std::vector<std::size_t> item_count(ni, 0);
  for (std::size_t u = 0; u < nu; ++u) {
    std::size_t row = 0;
    for (std::size_t v = 0; v < ni; ++v) {
      if (pick_rng.uniform() < std::min(1.0, scale * activity[u] * popularity[v])) {
        observed[u][v] = true;
        ++row;
        ++item_count[v];
      }
    }
    if (row == 0) {
      const auto v = pick_rng.below(ni);
      observed[u][v] = true;
      ++item_count[v];
    }
  }
  for (std::size_t v = 0; v < ni; ++v) {
    if (item_count[v] == 0) observed[pick_rng.below(nu)][v] = true;
  }

  std::vector<RawRating> records;
  records.reserve(static_cast<std::size_t>(target * 1.1) + nu + ni);
  for (std::size_t u = 0; u < nu; ++u)
    for (std::size_t v = 0; v < ni; ++v)
      if (observed[u][v]) {
        records.push_back({static_cast<std::int64_t>(u), static_cast<std::int64_t>(v),
                           rating_of(u, v), std::nullopt});
      }
  return Dataset::from_records(records);
}

}  // namespace cfrec
