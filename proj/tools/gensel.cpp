// gensel: scenario generation, anchor fitting, training, evaluation and reporting.
//
// Exit codes: 0 success, 2 configuration or usage, 3 I/O, 4 parse,
// 5 scenario generation, 6 training divergence, 7 contract or dimension
// violation, 1 anything else.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "gensel/errors.hpp"
#include "gensel/pipeline.hpp"

using namespace gensel;

namespace {

RunConfig config_from(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

int gen_data(const RunConfig& cfg, std::size_t count, std::uint64_t seed, const std::string& out) {
  save_scenarios_file(out, generate_dataset(cfg, count, seed, cfg.threads));
  std::cout << "wrote " << count << " scenarios to " << out << "\n";
  return 0;
}

int fit(const RunConfig& cfg, const std::string& scenarios, std::size_t n, const std::string& out) {
  const auto vocab = fit_anchor_vocabulary(cfg, load_scenarios_file(scenarios), n);
  save_anchors_file(out, vocab);
  std::cout << "wrote " << vocab.size() << " anchors to " << out << " (final inertia "
            << (vocab.inertia_history.empty() ? 0.0 : vocab.inertia_history.back()) << ")\n";
  return 0;
}

int train(const RunConfig& cfg, const std::string& scenarios, const std::string& anchors, const std::string& out,
          const std::string& log_path) {
  const auto all = load_scenarios_file(scenarios);
  const auto vocab = load_anchors_file(anchors);
  Model model(cfg);
  std::ostringstream log;
  const auto entries = train_model(model, training_split(all), vocab, &log);
  model.store.save_file(out);
  if (!log_path.empty()) write_text_file(log_path, log.str());
  std::cout << "trained " << entries.size() << " steps, checkpoint " << out << "\n";
  return 0;
}

int evaluate(const RunConfig& cfg, const std::string& checkpoint, const std::string& scenarios, const std::string& anchors,
             Selector selector, bool bypass_wam, bool heldout_only, const std::string& out) {
  auto all = load_scenarios_file(scenarios);
  if (heldout_only) all = heldout_split(all);
  const auto vocab = load_anchors_file(anchors);
  Model model(cfg);
  if (!checkpoint.empty()) model.store.load_file(checkpoint);
  const auto episodes = evaluate_episodes(model, all, vocab, {selector, bypass_wam}, cfg.threads);
  write_results_file(out, episodes);
  std::cout << format_report(summarize(episodes));
  return 0;
}

int report(const std::string& results, const std::string& out, const std::string& json_out) {
  const auto summaries = summarize(read_results_file(results));
  const std::string text = format_report(summaries);
  std::cout << text;
  if (!out.empty()) write_text_file(out, text);
  if (!json_out.empty()) write_text_file(json_out, report_json(summaries));
  return 0;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const IoError*>(&e)) return 3;
  if (dynamic_cast<const ParseError*>(&e)) return 4;
  if (dynamic_cast<const GenerationError*>(&e)) return 5;
  if (dynamic_cast<const DivergenceError*>(&e)) return 6;
  if (dynamic_cast<const ContractError*>(&e) || dynamic_cast<const DimensionError*>(&e)) return 7;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generate, train, evaluate and select driving trajectory candidates"};
  app.require_subcommand(1);
  std::string config_path, out, scenarios, anchors, checkpoint, log_path, results, json_out, selector = "vloe";
  std::uint64_t seed = 0;
  std::size_t count = 100, n_anchors = 0;
  std::optional<std::size_t> threads;
  bool bypass_wam = false, heldout_only = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--threads", threads, "worker threads (overrides the config)");
  };

  auto* gen = app.add_subcommand("gen-data", "write seeded synthetic scenarios");
  add_common(gen);
  gen->add_option("--count", count, "number of scenarios")->capture_default_str();
  auto* seed_opt = gen->add_option("--seed", seed, "first scenario seed (default: the config's data seed)");
  gen->add_option("--out", out, "scenario file")->required();

  auto* fitc = app.add_subcommand("fit-anchors", "cluster expert trajectories into an anchor vocabulary");
  add_common(fitc);
  fitc->add_option("--scenarios", scenarios, "scenario file")->required();
  fitc->add_option("--N", n_anchors, "anchor count (default: the config's)");
  fitc->add_option("--out", out, "anchor file")->required();

  auto* tr = app.add_subcommand("train", "two-phase training on the even-seed scenarios");
  add_common(tr);
  tr->add_option("--scenarios", scenarios, "scenario file")->required();
  tr->add_option("--anchors", anchors, "anchor file")->required();
  tr->add_option("--out", out, "checkpoint file")->required();
  tr->add_option("--log", log_path, "per-step loss log (JSON lines)");

  auto* ev = app.add_subcommand("evaluate", "generate, score, select and compare per scenario");
  add_common(ev);
  ev->add_option("--checkpoint", checkpoint, "checkpoint file (default: initialization)");
  ev->add_option("--scenarios", scenarios, "scenario file")->required();
  ev->add_option("--anchors", anchors, "anchor file")->required();
  ev->add_option("--selector", selector, "vloe, oracle, random or first")->capture_default_str();
  ev->add_flag("--bypass-wam", bypass_wam, "use the current features as the future ones");
  ev->add_flag("--heldout", heldout_only, "evaluate only the odd-seed scenarios");
  ev->add_option("--out", out, "results file (JSON lines)")->required();

  auto* rep = app.add_subcommand("report", "summary table from a results file");
  rep->add_option("--results", results, "results file")->required();
  rep->add_option("--out", out, "text table");
  rep->add_option("--json", json_out, "structured summary");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg = config_from(config_path);
    if (threads) {
      cfg.threads = *threads;
      validate(cfg);
    }
    if (gen->parsed()) return gen_data(cfg, count, seed_opt->count() ? seed : cfg.data_seed, out);
    if (fitc->parsed()) return fit(cfg, scenarios, n_anchors ? n_anchors : cfg.anchors, out);
    if (tr->parsed()) return train(cfg, scenarios, anchors, out, log_path);
    if (ev->parsed())
      return evaluate(cfg, checkpoint, scenarios, anchors, selector_from_string(selector), bypass_wam, heldout_only, out);
    if (rep->parsed()) return report(results, out, json_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 1;
}
