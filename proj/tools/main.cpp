// cfrec: ingest, train, explain, evaluate and sweep from the command line.
//
// Exit codes: 0 success, 1 unexpected failure, 2 invalid input, 3 numeric failure.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cfrec/checkpoint.hpp"
#include "cfrec/errors.hpp"
#include "cfrec/eval.hpp"
#include "cfrec/random.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cfrec::cli {
namespace {

// Flags given on the command line; each one set overrides the config file.
struct Overrides {
  std::optional<std::string> config;
  bool dump_config = false;
  bool progress = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;

  std::optional<std::string> canonical;
  std::optional<std::string> movielens;
  bool synthetic = false;
  std::optional<std::size_t> syn_users, syn_items, syn_latent;
  std::optional<double> syn_density, syn_noise;
  std::optional<std::size_t> min_actions;

  std::optional<std::string> model;
  std::optional<std::size_t> d, epochs, batch_size;
  std::optional<double> lr;
  std::optional<std::vector<std::size_t>> hidden;
  std::optional<std::string> scale;

  std::optional<std::string> method, scope, n_convention;
  std::optional<double> damping, continuation_lr;
  std::optional<bool> relative_damping;
  std::optional<std::size_t> t2_epochs;

  std::optional<std::string> algo;
  std::optional<std::size_t> max_removals;
  std::optional<std::vector<std::size_t>> ks;
  std::optional<std::size_t> n_users;
  std::optional<std::vector<std::size_t>> dims;

  std::optional<std::string> checkpoint, explanations, label;
  bool dump_influence = false;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "JSON run configuration; flags override its values");
  app->add_flag("--dump-config", o.dump_config, "Print the resolved configuration and exit");
  app->add_flag("--progress", o.progress, "Report progress on stderr");
  app->add_option("--seed", o.seed, "Top-level seed; every stage seed is derived from it");
  app->add_option("--out", o.out, "Output directory");
  app->add_option("--threads", o.threads, "Worker threads");
}

void add_dataset(CLI::App* app, Overrides& o) {
  app->add_option("--dataset,dataset", o.canonical, "Canonical dataset CSV");
  app->add_option("--movielens", o.movielens, "Raw MovieLens ratings file");
  app->add_option("--min-actions", o.min_actions, "Keep users with at least this many interactions");
}

void add_train(CLI::App* app, Overrides& o) {
  app->add_option("--model", o.model, "ncf or fm");
  app->add_option("--d", o.d, "Embedding dimension");
  app->add_option("--epochs", o.epochs, "Training epochs");
  app->add_option("--lr", o.lr, "SGD learning rate");
  app->add_option("--batch-size", o.batch_size, "Minibatch size");
  app->add_option("--hidden", o.hidden, "NCF hidden widths, comma separated")->delimiter(',')->allow_extra_args(false);
  app->add_option("--scale", o.scale, "Rating scale: unit or raw");
}

void add_influence(CLI::App* app, Overrides& o) {
  app->add_option("--method", o.method, "gradient or data");
  app->add_option("--scope", o.scope, "user_block or user_and_items_block");
  app->add_option("--damping", o.damping, "Hessian damping");
  app->add_option("--relative-damping", o.relative_damping, "Scale damping by the Hessian diagonal mean");
  app->add_option("--n-convention", o.n_convention, "user_n or global_n");
  app->add_option("--t2", o.t2_epochs, "Continuation epochs for data-based estimation");
  app->add_option("--continuation-lr", o.continuation_lr, "Learning rate for data-based continuation");
  app->add_option("--algo", o.algo, "accent (iterative greedy) or fia (greedy)");
  app->add_option("--max-removals", o.max_removals, "Cap on the explanation size");
  app->add_option("--label", o.label, "Explainer label in reports");
}

SearchAlgorithm parse_algo(const std::string& s) {
  if (s == "accent" || s == "ACCENT") return SearchAlgorithm::iterative_greedy;
  if (s == "fia" || s == "FIA") return SearchAlgorithm::greedy;
  return parse_search_algorithm(s);
}

template <typename T, typename U>
void apply(const std::optional<T>& src, U& dst) {
  if (src) dst = *src;
}

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config ? load_run_config(*o.config) : RunConfig{};
  apply(o.seed, c.seed);
  apply(o.out, c.out);
  apply(o.threads, c.threads);

  auto& ds = c.dataset;
  if (o.canonical || o.movielens || o.synthetic) {
    ds.canonical.reset();
    ds.movielens.reset();
    ds.synthetic.reset();
  }
  if (o.canonical) ds.canonical = *o.canonical;
  if (o.movielens) ds.movielens = *o.movielens;
  if (o.synthetic) ds.synthetic = SynthConfig{};
  if (o.syn_users || o.syn_items || o.syn_density || o.syn_latent || o.syn_noise) {
    if (!ds.synthetic) throw InputError("synthetic size flags need --synthetic");
    apply(o.syn_users, ds.synthetic->num_users);
    apply(o.syn_items, ds.synthetic->num_items);
    apply(o.syn_density, ds.synthetic->density);
    apply(o.syn_latent, ds.synthetic->num_latent_causes);
    apply(o.syn_noise, ds.synthetic->noise_std);
  }
  apply(o.min_actions, ds.min_actions);

  if (o.model) c.model = parse_model_kind(*o.model);
  apply(o.d, c.train.d);
  apply(o.epochs, c.train.epochs);
  apply(o.lr, c.train.lr);
  apply(o.batch_size, c.train.batch_size);
  apply(o.hidden, c.train.hidden_widths);
  if (o.scale) c.train.rating_scale = parse_rating_scale(*o.scale);

  if (o.method) c.influence.method = parse_influence_method(*o.method);
  if (o.scope) c.influence.scope = parse_param_scope(*o.scope);
  if (o.n_convention) c.influence.n_convention = parse_n_convention(*o.n_convention);
  apply(o.damping, c.influence.damping);
  apply(o.relative_damping, c.influence.relative_damping);
  apply(o.t2_epochs, c.influence.t2_epochs);
  if (o.continuation_lr) c.influence.continuation_lr = *o.continuation_lr;

  if (o.algo) c.algorithm = parse_algo(*o.algo);
  if (o.max_removals) c.max_removals = *o.max_removals;
  apply(o.ks, c.eval.ks);
  apply(o.n_users, c.eval.n_users);
  apply(o.dims, c.eval.dims);

  if (o.checkpoint) c.checkpoint = *o.checkpoint;
  if (o.explanations) c.explanations = *o.explanations;
  if (o.label) c.label = *o.label;
  if (o.dump_influence) c.dump_influence = true;
  return c;
}

std::vector<fs::path> dataset_inputs(const RunConfig& c) {
  std::vector<fs::path> in;
  if (c.dataset.canonical) in.emplace_back(*c.dataset.canonical);
  if (c.dataset.movielens) in.emplace_back(*c.dataset.movielens);
  return in;
}

RunOptions run_options(const RunConfig& c, bool progress) {
  RunOptions opts;
  opts.threads = c.threads;
  if (progress) {
    opts.progress = [mu = std::make_shared<std::mutex>()](std::string_view msg) {
      std::lock_guard lock(*mu);
      std::cerr << msg << '\n';
    };
  }
  return opts;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) throw Error("cannot write " + path.string());
}

std::string g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void print_stats(const Dataset& ds) {
  const auto s = ds.stats();
  std::printf("users        %zu\nitems        %zu\ninteractions %zu\ndensity      %.6f\n", s.num_users,
              s.num_items, s.num_interactions, s.density);
}

// The model to explain: a saved checkpoint when given, else trained from the configuration.
struct LoadedModel {
  ModelKind kind;
  Model model;
  TrainConfig train;
};

LoadedModel obtain_model(const RunConfig& c, const Dataset& ds) {
  if (c.checkpoint) {
    auto ck = load_checkpoint(*c.checkpoint);
    const auto& sh = ck.model.shape();
    if (sh.num_users != ds.num_users() || sh.num_items != ds.num_items()) {
      throw InputError("checkpoint " + *c.checkpoint + " does not match the dataset dimensions");
    }
    const auto kind = ck.model.kind();
    return {kind, std::move(ck.model), ck.train};
  }
  const auto train_cfg = c.resolved_train();
  return {c.model, train(c.model, ds, train_cfg).model, train_cfg};
}

int cmd_ingest(const RunConfig& c) {
  const Dataset ds = load_dataset(c);
  fs::path out_dir = c.out;
  fs::path csv = out_dir / "dataset.csv";
  if (fs::path(c.out).extension() == ".csv") {
    csv = c.out;
    out_dir = csv.has_parent_path() ? csv.parent_path() : fs::path(".");
  }
  fs::create_directories(out_dir);
  write_canonical_csv(ds, csv);
  print_stats(ds);
  write_manifest({"ingest", to_json(c), dataset_inputs(c), {fs::relative(csv, out_dir)}}, out_dir);
  return 0;
}

int cmd_train(const RunConfig& c) {
  const Dataset ds = load_dataset(c);
  const auto train_cfg = c.resolved_train();
  const auto result = train(c.model, ds, train_cfg);
  const fs::path out_dir = c.out;
  fs::create_directories(out_dir);
  save_checkpoint(result.model, train_cfg, out_dir / "checkpoint");
  std::string trace = "epoch,mse\n";
  for (std::size_t e = 0; e < result.mse_trace.size(); ++e) {
    trace += std::to_string(e + 1) + "," + g17(result.mse_trace[e]) + "\n";
  }
  write_file(out_dir / "mse_trace.csv", trace);
  const double final_mse = mse(result.model, ds);
  std::printf("final_mse %s\n", format_fixed(final_mse, 6).c_str());
  write_manifest({"train", to_json(c), dataset_inputs(c),
                  {"checkpoint/model.json", "checkpoint/model.bin", "mse_trace.csv"}},
                 out_dir);
  return 0;
}

int cmd_explain(const RunConfig& c, bool progress) {
  const Dataset ds = load_dataset(c);
  const auto lm = obtain_model(c, ds);
  const auto users = sample_users(ds, c.eval.n_users, derive_seed(c.seed, "sample"));
  const auto& ks = c.eval.ks;
  const std::size_t kmax = *std::max_element(ks.begin(), ks.end());
  const auto opts = run_options(c, progress);
  const std::string label = c.resolved_label();

  std::vector<std::vector<Explanation>> found(ks.size(), std::vector<Explanation>(users.size()));
  std::vector<std::string> notes(users.size());
  std::vector<std::optional<InfluenceTable>> tables(users.size());
  parallel_for(users.size(), c.threads, [&](std::size_t ui) {
    const UserIndex u = users[ui];
    std::vector<ItemIndex> items;
    for (const auto& p : top_k(lm.model, u, ds, kmax)) items.push_back(p.item);
    try {
      tables[ui] = influence_table(lm.model, ds, u, items, c.influence, lm.train);
    } catch (const NumericError& ex) {
      notes[ui] = ex.what();
    }
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      const std::size_t k = std::min(ks[ki], items.size());
      if (tables[ui]) {
        found[ki][ui] = search(truncate_items(*tables[ui], k), SearchConfig{ks[ki], c.algorithm, c.max_removals});
      } else {
        auto& e = found[ki][ui];
        e.user = u;
        e.rec = items.front();
        e.algorithm = c.algorithm;
        e.method = c.influence.method;
        e.k = k;
      }
    }
    if (opts.progress) opts.progress("explained user " + std::to_string(ds.external_user(u)));
  });

  const fs::path out_dir = c.out;
  fs::create_directories(out_dir);
  std::string jsonl;
  json summary = {{"explainer", label},
                  {"model", to_string(lm.kind)},
                  {"mse", mse(lm.model, ds)},
                  {"per_k", json::array()}};
  for (std::size_t ki = 0; ki < ks.size(); ++ki) {
    std::size_t n_found = 0;
    std::size_t total_size = 0;
    for (std::size_t ui = 0; ui < users.size(); ++ui) {
      const auto& e = found[ki][ui];
      auto j = to_json(e, ds);
      j["explainer"] = label;
      if (!notes[ui].empty()) j["note"] = notes[ui];
      jsonl += j.dump() + "\n";
      if (e.found()) {
        ++n_found;
        total_size += e.removed.size();
      }
    }
    const double mean_size = n_found ? double(total_size) / double(n_found) : 0.0;
    summary["per_k"].push_back({{"K", ks[ki]},
                                {"attempted", users.size()},
                                {"found", n_found},
                                {"exhausted", users.size() - n_found},
                                {"mean_size", n_found ? json(mean_size) : json(nullptr)}});
    std::printf("%s K=%zu attempted %zu found %zu exhausted %zu\n", label.c_str(), ks[ki], users.size(), n_found,
                users.size() - n_found);
  }
  write_file(out_dir / "explanations.jsonl", jsonl);
  write_file(out_dir / "summary.json", summary.dump(2) + "\n");
  std::vector<fs::path> outputs{"explanations.jsonl", "summary.json"};
  if (c.dump_influence) {
    std::ofstream csv(out_dir / "influence.csv");
    bool header = true;
    for (const auto& t : tables) {
      if (!t) continue;
      write_influence_csv(*t, ds, csv, header);
      header = false;
    }
    if (!csv) throw Error("cannot write influence.csv");
    outputs.emplace_back("influence.csv");
  }
  auto inputs = dataset_inputs(c);
  if (c.checkpoint) inputs.emplace_back(*c.checkpoint);
  write_manifest({"explain", to_json(c), inputs, outputs}, out_dir);
  return 0;
}

json verified_json(const VerifiedExplanation& v, const Dataset& ds, const std::string& label) {
  auto j = to_json(v.explanation, ds);
  j["explainer"] = label;
  j["actual_new_top1"] = v.actual_new_top1 ? json(ds.external_item(*v.actual_new_top1)) : json(nullptr);
  j["success"] = v.success;
  j["diverged"] = v.diverged;
  if (!v.note.empty()) j["note"] = v.note;
  return j;
}

int cmd_evaluate(const RunConfig& c, bool progress) {
  if (!c.explanations) throw InputError("evaluate needs --explanations");
  const Dataset ds = load_dataset(c);
  const auto lm = obtain_model(c, ds);

  std::ifstream in(*c.explanations);
  if (!in) throw InputError("cannot open " + *c.explanations);
  std::vector<std::size_t> ks;
  std::vector<std::vector<Explanation>> groups;
  std::string label = c.label.value_or("");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      auto e = explanation_from_json(j, ds);
      if (label.empty() && j.contains("explainer")) label = j.at("explainer").get<std::string>();
      auto it = std::find(ks.begin(), ks.end(), e.k);
      if (it == ks.end()) {
        ks.push_back(e.k);
        groups.emplace_back();
        it = std::prev(ks.end());
      }
      groups[static_cast<std::size_t>(it - ks.begin())].push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw ParseError(*c.explanations, line_no, ex.what());
    } catch (const InputError& ex) {
      throw ParseError(*c.explanations, line_no, ex.what());
    }
  }
  if (groups.empty()) throw InputError(*c.explanations + " holds no explanations");
  if (label.empty()) label = c.resolved_label();

  const fs::path out_dir = c.out;
  fs::create_directories(out_dir);
  ExperimentReport report;
  report.label = label;
  report.model = lm.kind;
  report.seed = c.seed;
  report.train = lm.train;
  report.mse = mse(lm.model, ds);
  for (const auto& e : groups.front()) report.users.push_back(e.user);

  // Verified records are appended chunk by chunk so an interrupted run keeps its progress.
  std::ofstream partial(out_dir / "verified.jsonl", std::ios::binary | std::ios::trunc);
  const auto opts = run_options(c, progress);
  const std::size_t chunk = std::max<std::size_t>(1, 4 * c.threads);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    KResult kr;
    kr.k = ks[gi];
    kr.attempted = g.size();
    for (std::size_t start = 0; start < g.size(); start += chunk) {
      const auto part = std::span<const Explanation>(g).subspan(start, std::min(chunk, g.size() - start));
      auto res = verify_explanations(ds, lm.kind, lm.train, part, kr.k, opts);
      for (auto& r : res.records) {
        partial << verified_json(r, ds, label).dump() << '\n';
        kr.records.push_back(std::move(r));
      }
      partial.flush();
      if (opts.progress) {
        opts.progress("K=" + std::to_string(kr.k) + " verified " + std::to_string(kr.records.size()) + "/" +
                      std::to_string(g.size()));
      }
    }
    for (const auto& r : kr.records) {
      kr.found += r.explanation.found();
      kr.successes += r.success;
      kr.diverged += r.diverged;
    }
    kr.esp = esp(kr.records, kr.attempted);
    kr.aes = aes(kr.records);
    report.per_k.push_back(std::move(kr));
  }
  partial.close();

  const ExperimentReport reports[] = {report};
  const auto rows = summarize(reports);
  std::ostringstream csv;
  write_report_csv(rows, csv);
  write_file(out_dir / "report.csv", csv.str());
  write_file(out_dir / "report.json", to_json(report, ds).dump(2) + "\n");
  std::cout << csv.str();

  auto inputs = dataset_inputs(c);
  inputs.emplace_back(*c.explanations);
  if (c.checkpoint) inputs.emplace_back(*c.checkpoint);
  write_manifest({"evaluate", to_json(c), inputs, {"verified.jsonl", "report.csv", "report.json"}}, out_dir);
  return 0;
}

int cmd_sweep(const RunConfig& c, bool progress) {
  if (c.eval.dims.empty()) throw InputError("embedding sweep needs at least one dimension");
  const Dataset ds = load_dataset(c);
  ExplainerSpec spec;
  spec.label = c.resolved_label();
  spec.model = c.model;
  spec.train = c.train;
  spec.influence = c.influence;
  spec.algorithm = c.algorithm;
  spec.max_removals = c.max_removals;
  const auto rows =
      sweep_embedding(ds, c.eval.dims, spec, c.eval.ks.front(), c.eval.n_users, c.seed, run_options(c, progress));

  const fs::path out_dir = c.out;
  fs::create_directories(out_dir);
  std::ostringstream csv, svg;
  write_sweep_csv(rows, csv);
  write_sweep_svg(rows, svg);
  write_file(out_dir / "sweep.csv", csv.str());
  write_file(out_dir / "sweep.svg", svg.str());
  write_file(out_dir / "sweep_summary.json", sweep_summary(rows).dump(2) + "\n");
  std::cout << csv.str();
  write_manifest({"sweep", to_json(c), dataset_inputs(c), {"sweep.csv", "sweep.svg", "sweep_summary.json"}},
                 out_dir);
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"Counterfactual explanations for collaborative-filtering recommenders"};
  app.require_subcommand(1);
  Overrides o;

  auto* ingest = app.add_subcommand("ingest", "Parse or generate a dataset and write it as canonical CSV");
  add_common(ingest, o);
  ingest->add_option("--movielens", o.movielens, "Raw MovieLens ratings file");
  ingest->add_option("--canonical", o.canonical, "Canonical dataset CSV");
  ingest->add_flag("--synthetic", o.synthetic, "Generate a synthetic low-rank dataset");
  ingest->add_option("--users", o.syn_users, "Synthetic users");
  ingest->add_option("--items", o.syn_items, "Synthetic items");
  ingest->add_option("--density", o.syn_density, "Synthetic density");
  ingest->add_option("--latent", o.syn_latent, "Synthetic latent causes");
  ingest->add_option("--noise", o.syn_noise, "Synthetic rating noise");
  ingest->add_option("--min-actions", o.min_actions, "Keep users with at least this many interactions");

  auto* train_cmd = app.add_subcommand("train", "Train a model and save a checkpoint");
  add_common(train_cmd, o);
  add_dataset(train_cmd, o);
  add_train(train_cmd, o);

  auto* explain = app.add_subcommand("explain", "Find counterfactual explanations for sampled users");
  add_common(explain, o);
  add_dataset(explain, o);
  add_train(explain, o);
  add_influence(explain, o);
  explain->add_option("--checkpoint", o.checkpoint, "Checkpoint directory; trains from the config when absent");
  explain->add_option("--k", o.ks, "Candidate pool sizes, comma separated")->delimiter(',')->allow_extra_args(false);
  explain->add_option("--users", o.n_users, "Number of sampled users");
  explain->add_flag("--dump-influence", o.dump_influence, "Also write every influence score");

  auto* evaluate = app.add_subcommand("evaluate", "Verify explanations by retraining and report ESP and AES");
  add_common(evaluate, o);
  add_dataset(evaluate, o);
  add_train(evaluate, o);
  evaluate->add_option("--explanations", o.explanations, "JSONL written by explain");
  evaluate->add_option("--checkpoint", o.checkpoint, "Checkpoint the explanations came from");
  evaluate->add_option("--label", o.label, "Explainer label in reports");

  auto* sweep = app.add_subcommand("sweep", "Train and explain across embedding dimensions");
  add_common(sweep, o);
  add_dataset(sweep, o);
  add_train(sweep, o);
  add_influence(sweep, o);
  sweep->add_option("--dims", o.dims, "Embedding dimensions, comma separated")->delimiter(',')->allow_extra_args(false);
  sweep->add_option("--k", o.ks, "Candidate pool size")->delimiter(',')->allow_extra_args(false);
  sweep->add_option("--users", o.n_users, "Number of sampled users per dimension");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const RunConfig cfg = resolve(o);
  if (o.dump_config) {
    std::cout << to_json(cfg).dump(2) << '\n';
    return 0;
  }
  cfg.validate();
  if (ingest->parsed()) return cmd_ingest(cfg);
  if (train_cmd->parsed()) return cmd_train(cfg);
  if (explain->parsed()) return cmd_explain(cfg, o.progress);
  if (evaluate->parsed()) return cmd_evaluate(cfg, o.progress);
  return cmd_sweep(cfg, o.progress);
}

}  // namespace
}  // namespace cfrec::cli

int main(int argc, char** argv) {
  try {
    return cfrec::cli::run(argc, argv);
  } catch (const cfrec::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const cfrec::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
