#include "run_config.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <memory>
#include <set>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <openssl/evp.h>

#include "cfrec/errors.hpp"
#include "cfrec/random.hpp"

#ifndef CFREC_VERSION
#define CFREC_VERSION "unknown"
#endif

namespace cfrec::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json opt_json(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }

void reject_unknown(const json& j, std::string_view where, std::initializer_list<std::string_view> keys) {
  if (!j.is_object()) throw InputError(std::string(where) + " must be a JSON object");
  const std::set<std::string_view> allowed(keys);
  for (const auto& [k, _] : j.items()) {
    if (!allowed.contains(k)) throw InputError("unknown config key " + std::string(where) + "." + k);
  }
}

template <typename T>
void read(const json& j, const char* key, T& dst) {
  if (auto it = j.find(key); it != j.end()) dst = it->get<T>();
}

template <typename T>
void read(const json& j, const char* key, std::optional<T>& dst) {
  if (auto it = j.find(key); it != j.end()) {
    if (it->is_null()) {
      dst.reset();
    } else {
      dst = it->get<T>();
    }
  }
}

json synth_json(const SynthConfig& s) {
  return {{"users", s.num_users},
          {"items", s.num_items},
          {"density", s.density},
          {"latent_causes", s.num_latent_causes},
          {"noise_std", s.noise_std}};
}

SynthConfig synth_from_json(const json& j) {
  reject_unknown(j, "dataset.synthetic", {"users", "items", "density", "latent_causes", "noise_std"});
  SynthConfig s;
  read(j, "users", s.num_users);
  read(j, "items", s.num_items);
  read(j, "density", s.density);
  read(j, "latent_causes", s.num_latent_causes);
  read(j, "noise_std", s.noise_std);
  return s;
}

void require_file(const std::optional<std::string>& p, std::string_view what) {
  if (p && !fs::exists(*p)) throw InputError(std::string(what) + " not found: " + *p);
}

}  // namespace

void RunConfig::validate() const {
  const int sources = int(dataset.canonical.has_value()) + int(dataset.movielens.has_value()) +
                      int(dataset.synthetic.has_value());
  if (sources != 1) throw InputError("exactly one dataset source is required (canonical, movielens or synthetic)");
  require_file(dataset.canonical, "dataset");
  require_file(dataset.movielens, "ratings file");
  require_file(explanations, "explanations file");
  if (checkpoint && !fs::is_directory(*checkpoint)) throw InputError("checkpoint directory not found: " + *checkpoint);
  if (dataset.synthetic) dataset.synthetic->validate();
  if (threads == 0) throw InputError("threads must be positive");
  if (eval.ks.empty()) throw InputError("K list is empty");
  if (eval.n_users == 0) throw InputError("n_users must be positive");
  for (auto k : eval.ks) SearchConfig{k, algorithm, max_removals}.validate();
  for (auto d : eval.dims) {
    if (d == 0) throw InputError("embedding dimension must be positive");
  }
  if (out.empty()) throw InputError("output directory must be non-empty");
  resolved_train().validate();
  influence.validate();
}

TrainConfig RunConfig::resolved_train() const {
  TrainConfig t = train;
  t.seed = derive_seed(seed, "train");
  return t;
}

std::string RunConfig::resolved_label() const {
  if (label) return *label;
  if (influence.method == InfluenceMethod::data_based) return model == ModelKind::fm ? "DB-FM" : "DB-NCF";
  return algorithm == SearchAlgorithm::iterative_greedy ? "ACCENT" : "FIA";
}

json to_json(const RunConfig& c) {
  return {
      {"seed", c.seed},
      {"threads", c.threads},
      {"out", c.out},
      {"dataset",
       {{"canonical", opt_json(c.dataset.canonical)},
        {"movielens", opt_json(c.dataset.movielens)},
        {"synthetic", c.dataset.synthetic ? synth_json(*c.dataset.synthetic) : json(nullptr)},
        {"min_actions", c.dataset.min_actions}}},
      {"model", to_string(c.model)},
      {"train",
       {{"d", c.train.d},
        {"lr", c.train.lr},
        {"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"hidden_widths", c.train.hidden_widths},
        {"rating_scale", to_string(c.train.rating_scale)}}},
      {"influence",
       {{"method", to_string(c.influence.method)},
        {"scope", to_string(c.influence.scope)},
        {"damping", c.influence.damping},
        {"relative_damping", c.influence.relative_damping},
        {"n_convention", to_string(c.influence.n_convention)},
        {"t2_epochs", c.influence.t2_epochs},
        {"continuation_lr", c.influence.continuation_lr ? json(*c.influence.continuation_lr) : json(nullptr)}}},
      {"search",
       {{"algorithm", to_string(c.algorithm)},
        {"max_removals", c.max_removals ? json(*c.max_removals) : json(nullptr)}}},
      {"eval", {{"n_users", c.eval.n_users}, {"ks", c.eval.ks}, {"dims", c.eval.dims}}},
      {"checkpoint", opt_json(c.checkpoint)},
      {"explanations", opt_json(c.explanations)},
      {"label", opt_json(c.label)},
      {"dump_influence", c.dump_influence},
  };
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    reject_unknown(j, "config", {"seed", "threads", "out", "dataset", "model", "train", "influence", "search",
                                 "eval", "checkpoint", "explanations", "label", "dump_influence"});
    read(j, "seed", c.seed);
    read(j, "threads", c.threads);
    read(j, "out", c.out);
    read(j, "checkpoint", c.checkpoint);
    read(j, "explanations", c.explanations);
    read(j, "label", c.label);
    read(j, "dump_influence", c.dump_influence);
    if (auto it = j.find("model"); it != j.end()) c.model = parse_model_kind(it->get<std::string>());

    if (auto it = j.find("dataset"); it != j.end()) {
      const auto& d = *it;
      reject_unknown(d, "dataset", {"canonical", "movielens", "synthetic", "min_actions"});
      read(d, "canonical", c.dataset.canonical);
      read(d, "movielens", c.dataset.movielens);
      read(d, "min_actions", c.dataset.min_actions);
      if (auto s = d.find("synthetic"); s != d.end() && !s->is_null()) c.dataset.synthetic = synth_from_json(*s);
    }
    if (auto it = j.find("train"); it != j.end()) {
      const auto& t = *it;
      reject_unknown(t, "train", {"d", "lr", "epochs", "batch_size", "hidden_widths", "rating_scale"});
      read(t, "d", c.train.d);
      read(t, "lr", c.train.lr);
      read(t, "epochs", c.train.epochs);
      read(t, "batch_size", c.train.batch_size);
      read(t, "hidden_widths", c.train.hidden_widths);
      if (auto s = t.find("rating_scale"); s != t.end()) c.train.rating_scale = parse_rating_scale(s->get<std::string>());
    }
    if (auto it = j.find("influence"); it != j.end()) {
      const auto& f = *it;
      reject_unknown(f, "influence", {"method", "scope", "damping", "relative_damping", "n_convention", "t2_epochs",
                                      "continuation_lr"});
      if (auto s = f.find("method"); s != f.end()) c.influence.method = parse_influence_method(s->get<std::string>());
      if (auto s = f.find("scope"); s != f.end()) c.influence.scope = parse_param_scope(s->get<std::string>());
      if (auto s = f.find("n_convention"); s != f.end()) {
        c.influence.n_convention = parse_n_convention(s->get<std::string>());
      }
      read(f, "damping", c.influence.damping);
      read(f, "relative_damping", c.influence.relative_damping);
      read(f, "t2_epochs", c.influence.t2_epochs);
      read(f, "continuation_lr", c.influence.continuation_lr);
    }
    if (auto it = j.find("search"); it != j.end()) {
      const auto& s = *it;
      reject_unknown(s, "search", {"algorithm", "max_removals"});
      if (auto a = s.find("algorithm"); a != s.end()) c.algorithm = parse_search_algorithm(a->get<std::string>());
      read(s, "max_removals", c.max_removals);
    }
    if (auto it = j.find("eval"); it != j.end()) {
      const auto& e = *it;
      reject_unknown(e, "eval", {"n_users", "ks", "dims"});
      read(e, "n_users", c.eval.n_users);
      read(e, "ks", c.eval.ks);
      read(e, "dims", c.eval.dims);
    }
  } catch (const json::exception& ex) {
    throw InputError(std::string("invalid config: ") + ex.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& ex) {
    throw InputError(path.string() + ": " + ex.what());
  }
  return run_config_from_json(j);
}

Dataset load_dataset(const RunConfig& cfg) {
  Dataset ds;
  if (cfg.dataset.canonical) {
    ds = parse_canonical_csv(fs::path(*cfg.dataset.canonical));
  } else if (cfg.dataset.movielens) {
    ds = parse_movielens(fs::path(*cfg.dataset.movielens));
  } else if (cfg.dataset.synthetic) {
    SynthConfig s = *cfg.dataset.synthetic;
    s.seed = derive_seed(cfg.seed, "synthetic");
    ds = synth_generate(s);
  } else {
    throw InputError("no dataset source configured");
  }
  if (cfg.dataset.min_actions > 0) ds = filter_min_actions(ds, cfg.dataset.min_actions);
  return ds;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256 init failed");
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
  std::string hex;
  char byte[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(byte, sizeof byte, "%02x", md[i]);
    hex += byte;
  }
  return hex;
}

void write_manifest(const Manifest& m, const fs::path& out_dir) {
  json inputs = json::object();
  for (const auto& p : m.inputs) {
    if (fs::is_directory(p)) {
      for (const auto& name : {"model.json", "model.bin"}) {
        inputs[(p / name).string()] = "sha256:" + sha256_file(p / name);
      }
    } else {
      inputs[p.string()] = "sha256:" + sha256_file(p);
    }
  }
  json outputs = json::object();
  for (const auto& p : m.outputs) outputs[p.generic_string()] = "sha256:" + sha256_file(out_dir / p);

  char eigen[32];
  std::snprintf(eigen, sizeof eigen, "%d.%d.%d", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION);
  char nl[32];
  std::snprintf(nl, sizeof nl, "%d.%d.%d", NLOHMANN_JSON_VERSION_MAJOR, NLOHMANN_JSON_VERSION_MINOR,
                NLOHMANN_JSON_VERSION_PATCH);
  const json manifest = {
      {"command", m.command},
      {"versions",
       {{"cfrec", CFREC_VERSION}, {"compiler", __VERSION__}, {"eigen", eigen}, {"nlohmann_json", nl},
        {"cli11", CLI11_VERSION}}},
      {"config", m.config},
      {"inputs", inputs},
      {"outputs", outputs},
  };
  std::ofstream out(out_dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw Error("cannot write " + (out_dir / "manifest.json").string());
}

}  // namespace cfrec::cli
