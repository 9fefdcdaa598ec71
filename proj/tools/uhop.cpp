// Command-line front end: dataset generation, training, evaluation,
// search-space accounting and the cross-length transfer run.
//
// Exit codes: 0 success, 1 usage error, 2 data/validation error,
// 3 budget/overflow.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "uhop/uhop.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitBudget = 3;

struct ScorerOptions {
  std::string variant = "attentive";
  int dim = 64;
  bool position_binding = false;
  int max_positions = 64;
  double init_range = 0.08;

  void add(CLI::App* app) {
    app->add_option("--variant", variant, "Scorer variant")->check(CLI::IsMember({"attentive", "meanpool"}));
    app->add_option("--dim", dim, "Embedding size")->check(CLI::PositiveNumber);
    app->add_flag("--position-binding,!--no-position-binding", position_binding,
                  "Bind token and path vectors to their positions");
    app->add_option("--max-positions", max_positions, "Positions with distinct binding patterns");
    app->add_option("--init-range", init_range, "Uniform init half-width");
  }

  uhop::ScorerConfig config(std::uint64_t seed) const {
    return {uhop::parse_variant(variant), dim, position_binding, max_positions, init_range, seed};
  }
};

struct TrainOptions {
  uhop::TrainConfig cfg;
  std::string optimizer = "rmsprop";

  void add(CLI::App* app) {
    app->add_option("--margin", cfg.margin, "Hinge margin in (0, 1]");
    app->add_option("--lr", cfg.learning_rate, "Learning rate");
    app->add_option("--optimizer", optimizer, "rmsprop or sgd")->check(CLI::IsMember({"rmsprop", "sgd"}));
    app->add_option("--rho", cfg.rho, "RMSprop decay");
    app->add_option("--epsilon", cfg.epsilon, "RMSprop epsilon");
    app->add_option("--epochs", cfg.epochs, "Maximum epochs");
    app->add_option("--batch-size", cfg.batch_size, "Mini-batch size");
    app->add_option("--patience", cfg.patience, "Early-stop patience (epochs)");
    app->add_option("--seed", cfg.seed, "Random seed");
    app->add_flag("--dynamic-question,!--no-dynamic-question", cfg.use_dynamic_question,
                  "Update the question representation after each hop");
    app->add_option("--hop-cap", cfg.hop_cap, "Safety bound on search length");
  }

  uhop::TrainConfig resolved() const {
    uhop::TrainConfig c = cfg;
    c.optimizer = optimizer == "sgd" ? uhop::OptimizerKind::sgd : uhop::OptimizerKind::rmsprop;
    return c;
  }
};

void write_resolved_config(const CLI::App* app, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream out(dir / "config.resolved");
  out << app->config_to_str(true, false);
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw uhop::Error("cannot write " + p.string());
  return out;
}

/// Files written next to a trained checkpoint.
struct ModelFiles {
  fs::path ckpt, vocab, meta;
  explicit ModelFiles(const fs::path& dir)
      : ckpt(dir / "best.ckpt"), vocab(dir / "best.vocab"), meta(dir / "best.meta") {}
};

std::map<std::string, std::string> read_meta(const fs::path& p) {
  std::map<std::string, std::string> kv;
  std::ifstream in(p);
  std::string k, v;
  while (in >> k >> v) kv[k] = v;
  return kv;
}

struct LoadedModel {
  uhop::ScorerParams params;
  uhop::Vocab vocab;
  uhop::RelationLexicon lexicon;
  bool dynamic_question = false;
};

LoadedModel load_model(const fs::path& dir, const uhop::KnowledgeGraph& g) {
  ModelFiles files(dir);
  LoadedModel m{uhop::load_checkpoint(files.ckpt.string()), uhop::Vocab::load(files.vocab.string()), {}, false};
  if (static_cast<std::size_t>(m.params.value.word_emb.rows()) != m.vocab.size())
    throw uhop::ValidationError("vocabulary mismatch: checkpoint has " +
                                std::to_string(m.params.value.word_emb.rows()) + " words, vocabulary file has " +
                                std::to_string(m.vocab.size()));
  if (static_cast<std::size_t>(m.params.value.rel_emb.rows()) != g.num_relations())
    throw uhop::ValidationError("relation mismatch: checkpoint has " + std::to_string(m.params.value.rel_emb.rows()) +
                                " relations, graph has " + std::to_string(g.num_relations()));
  m.lexicon = uhop::RelationLexicon::build(g, m.vocab);
  auto meta = read_meta(files.meta);
  m.dynamic_question = meta.count("dynamic_question") && meta["dynamic_question"] == "1";
  return m;
}

std::vector<uhop::HopMix> parse_hop_mix(const std::string& text) {
  std::vector<uhop::HopMix> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto colon = item.find(':');
    if (colon == std::string::npos) throw CLI::ValidationError("--hop-mix", "expected hops:count[,hops:count...]");
    out.push_back(uhop::HopMix::with_ratio(std::stoi(item.substr(0, colon)), std::stoi(item.substr(colon + 1))));
  }
  return out;
}

/// Expands `--config FILE` (key = value lines) into long options placed
/// ahead of the command line, skipping keys the command line already sets.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  auto it = std::find(args.begin(), args.end(), "--config");
  if (it == args.end()) return args;
  if (it + 1 == args.end()) throw CLI::ValidationError("--config", "missing file name");
  std::string file = *(it + 1);
  std::size_t at = static_cast<std::size_t>(it - args.begin());
  args.erase(it, it + 2);
  auto given = [&](const std::string& key) {
    return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == "--" + key || a.rfind("--" + key + "=", 0) == 0 || a == "--no-" + key;
    });
  };
  std::ifstream in(file);
  if (!in) throw CLI::ValidationError("--config", "cannot open " + file);
  std::vector<std::string> injected;
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        throw CLI::ValidationError("--config", "expected key = value: " + line);
      continue;
    }
    auto trim = [](std::string v) {
      auto b = v.find_first_not_of(" \t\r\"'");
      auto e = v.find_last_not_of(" \t\r\"'");
      return b == std::string::npos ? std::string{} : v.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (!given(key)) injected.push_back("--" + key + "=" + value);
  }
  // Options belong to the subcommand, so insert after its name.
  std::size_t pos = std::min<std::size_t>(1, at);
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(pos), injected.begin(), injected.end());
  return args;
}

void print_report(const uhop::EvalReport& r) {
  std::cout << r.split << ": n=" << r.n_examples << " accuracy=" << r.path_accuracy()
            << " RE=" << r.relation_errors() << " TD_early=" << r.stop_early_errors()
            << " TD_late=" << r.stop_late_errors() << " mean_candidates=" << r.mean_scored_candidates << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unrestricted-hop relation path extraction over knowledge graphs"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  // gen-grid
  uhop::GridSpec grid;
  std::string grid_out;
  auto* gen_grid = app.add_subcommand("gen-grid", "Generate a Grid World knowledge graph and questions");
  gen_grid->add_option("--out", grid_out, "Output directory")->required();
  gen_grid->add_option("--side", grid.side, "Grid side length");
  gen_grid->add_option("--min-hops", grid.min_hops, "Shortest instruction sequence");
  gen_grid->add_option("--max-hops", grid.max_hops, "Longest instruction sequence");
  gen_grid->add_option("--train", grid.train, "Training questions");
  gen_grid->add_option("--valid", grid.valid, "Validation questions");
  gen_grid->add_option("--test", grid.test, "Test questions");
  gen_grid->add_option("--seed", grid.seed, "Random seed");

  // gen-synth
  uhop::SynthSpec synth;
  std::string synth_out, hop_mix = "2:1275,3:1649";
  auto* gen_synth = app.add_subcommand("gen-synth", "Generate a template-based multi-hop QA dataset");
  gen_synth->add_option("--out", synth_out, "Output directory")->required();
  gen_synth->add_option("--entities", synth.n_entities, "Number of entities");
  gen_synth->add_option("--relations", synth.n_relations, "Number of relations");
  gen_synth->add_option("--branching", synth.branching, "Outbound relations per entity");
  gen_synth->add_option("--hop-mix", hop_mix, "hops:train_count list; valid/test get 1/8 each");
  gen_synth->add_option("--templates", synth.n_templates, "Surface forms per relation");
  gen_synth->add_option("--seed", synth.seed, "Random seed");

  // train
  std::string data_dir, kb, train_file, valid_file, out_dir;
  ScorerOptions scorer_opts;
  TrainOptions train_opts;
  auto* train = app.add_subcommand("train", "Train a scorer with the joint extraction/stop objective");
  train->add_option("--data", data_dir, "Dataset directory (kb.tsv, train.jsonl, valid.jsonl)");
  train->add_option("--kb", kb, "Triples file (overrides --data)");
  train->add_option("--train-file", train_file, "Training questions (overrides --data)");
  train->add_option("--valid-file", valid_file, "Validation questions (overrides --data)");
  train->add_option("--out", out_dir, "Output directory")->required();
  train->add_option("--chain-max-hops", train_opts.cfg.chain_max_hops,
                    "Train a relation-chain baseline over paths up to this length instead");
  scorer_opts.add(train);
  train_opts.add(train);

  // eval
  std::string model_dir, eval_kb, eval_out;
  std::vector<std::string> eval_files;
  bool oracle = false;
  int eval_hop_cap = 16;
  auto* eval = app.add_subcommand("eval", "Evaluate path accuracy and attribute errors");
  eval->add_option("--model", model_dir, "Directory with best.ckpt / best.vocab / best.meta");
  eval->add_flag("--oracle", oracle, "Use the gold-prefix oracle scorer instead of a model");
  eval->add_option("--kb", eval_kb, "Triples file")->required();
  eval->add_option("--data", eval_files, "Question files (one report row each)")->required();
  eval->add_option("--out", eval_out, "Output directory")->required();
  eval->add_option("--hop-cap", eval_hop_cap, "Safety bound on search length");

  // count-space
  std::string space_kb, space_data, space_out, space_model;
  std::string space_mode = "uhop";
  int space_hops = 3;
  std::size_t space_budget = 1'000'000;
  auto* space = app.add_subcommand("count-space", "Count scored candidates (uhop) or enumerated paths (chain)");
  space->add_option("--kb", space_kb, "Triples file")->required();
  space->add_option("--data", space_data, "Question file")->required();
  space->add_option("--mode", space_mode, "uhop, chain or both")->check(CLI::IsMember({"uhop", "chain", "both"}));
  space->add_option("--max-hops", space_hops, "Chain path length L");
  space->add_option("--budget", space_budget, "Chain enumeration budget per example");
  space->add_option("--model", space_model, "Score with a trained model instead of the oracle");
  space->add_option("--out", space_out, "Output directory")->required();

  // transfer
  std::string tr_kb, tr_train, tr_valid, tr_test, tr_out;
  int tr_chain_hops = 3;
  ScorerOptions tr_scorer;
  TrainOptions tr_train_opts;
  auto* transfer = app.add_subcommand("transfer", "Train on one path length, test on another, against a chain baseline");
  transfer->add_option("--kb", tr_kb, "Triples file")->required();
  transfer->add_option("--train-file", tr_train, "Training questions")->required();
  transfer->add_option("--valid-file", tr_valid, "Validation questions")->required();
  transfer->add_option("--test-file", tr_test, "Test questions")->required();
  transfer->add_option("--chain-max-hops", tr_chain_hops, "Chain baseline maximum length");
  transfer->add_option("--out", tr_out, "Output directory")->required();
  tr_scorer.add(transfer);
  tr_train_opts.add(transfer);

  app.footer("Every subcommand accepts --config FILE with key = value lines; command-line flags take precedence.");

  try {
    auto args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen_grid) {
      auto ds = uhop::gen_gridworld(grid);
      ds.write(grid_out);
      write_resolved_config(gen_grid, grid_out);
      std::cout << "wrote " << ds.triples.size() << " triples, " << ds.train.size() << '/' << ds.valid.size() << '/'
                << ds.test.size() << " questions to " << grid_out << '\n';
    } else if (*gen_synth) {
      synth.hop_mix = parse_hop_mix(hop_mix);
      auto ds = uhop::gen_synth(synth);
      ds.write(synth_out);
      write_resolved_config(gen_synth, synth_out);
      std::cout << "wrote " << ds.triples.size() << " triples, " << ds.train.size() << '/' << ds.valid.size() << '/'
                << ds.test.size() << " questions to " << synth_out << '\n';
    } else if (*train) {
      fs::path base(data_dir);
      if (kb.empty()) kb = (base / "kb.tsv").string();
      if (train_file.empty()) train_file = (base / "train.jsonl").string();
      if (valid_file.empty()) valid_file = (base / "valid.jsonl").string();
      auto g = uhop::load_triples(kb);
      auto tr = uhop::load_examples(train_file, &g);
      auto va = uhop::load_examples(valid_file, &g);
      auto cfg = train_opts.resolved();
      auto vocab = uhop::Vocab::build(g, tr);
      auto lex = uhop::RelationLexicon::build(g, vocab);
      auto init = uhop::ScorerParams::init(scorer_opts.config(cfg.seed), vocab.size(), g.num_relations());
      uhop::TrainContext ctx{&g, &vocab, &lex};
      fs::create_directories(out_dir);
      write_resolved_config(train, out_dir);
      auto res = uhop::fit(init, ctx, tr, va, cfg, [](const uhop::EpochLog& e) {
        std::cout << "epoch " << e.epoch << " loss " << e.mean_loss << " (re " << e.mean_loss_re << ", td "
                  << e.mean_loss_td << ") valid_acc " << e.valid_path_acc << " " << e.seconds << "s" << std::endl;
      });
      fs::path out(out_dir);
      uhop::write_training_log(res.log, (out / "train_log.csv").string());
      ModelFiles files(out);
      uhop::save_checkpoint(res.best, files.ckpt.string());
      vocab.save(files.vocab.string());
      auto meta = open_out(files.meta);
      meta << "epoch " << res.best_epoch << "\nvalid_path_acc " << res.best_valid_acc << "\ndynamic_question "
           << (cfg.use_dynamic_question ? 1 : 0) << "\nchain_max_hops " << cfg.chain_max_hops << '\n';
      std::cout << "best epoch " << res.best_epoch << " valid_acc " << res.best_valid_acc << '\n';
    } else if (*eval) {
      if (model_dir.empty() && !oracle) throw CLI::ValidationError("eval", "--model or --oracle is required");
      auto g = uhop::load_triples(eval_kb);
      fs::path out(eval_out);
      fs::create_directories(out);
      write_resolved_config(eval, out);
      auto traces = open_out(out / "traces.jsonl");
      std::vector<uhop::EvalReport> reports;
      std::optional<LoadedModel> model;
      if (!oracle) model = load_model(model_dir, g);
      uhop::EngineConfig engine{eval_hop_cap, model ? model->dynamic_question : false};
      for (const auto& file : eval_files) {
        auto data = uhop::load_examples(file, &g);
        std::string split = fs::path(file).stem().string();
        reports.push_back(model ? uhop::evaluate(model->params, model->vocab, model->lexicon, data, g, engine,
                                                 &traces, split)
                                : uhop::evaluate_oracle(data, g, engine, &traces, split));
        print_report(reports.back());
      }
      auto report = open_out(out / "report.csv");
      uhop::write_report_csv(report, reports);
      auto errors = open_out(out / "errors.csv");
      uhop::write_errors_csv(errors, reports);
    } else if (*space) {
      auto g = uhop::load_triples(space_kb);
      auto data = uhop::load_examples(space_data, &g);
      fs::path out(space_out);
      fs::create_directories(out);
      write_resolved_config(space, out);
      std::optional<LoadedModel> model;
      std::optional<uhop::NeuralScorer> scorer;
      if (!space_model.empty()) {
        model = load_model(space_model, g);
        scorer.emplace(model->params, model->vocab, model->lexicon);
      }
      uhop::EngineConfig engine{16, model ? model->dynamic_question : false};
      std::vector<uhop::SpaceReport> reports;
      if (space_mode != "chain")
        reports.push_back(uhop::count_search_space(data, g, uhop::SpaceMode::uhop(), scorer ? &*scorer : nullptr, engine));
      if (space_mode != "uhop")
        reports.push_back(
            uhop::count_search_space(data, g, uhop::SpaceMode::chain(space_hops), nullptr, engine, space_budget));
      auto csv = open_out(out / "space.csv");
      uhop::write_space_csv(csv, reports);
      std::size_t excluded = 0;
      for (const auto& r : reports) {
        std::cout << r.mode.name() << ": mean " << r.mean << " over " << r.rows.size() - r.excluded << " examples";
        if (r.excluded) std::cout << " (" << r.excluded << " over budget, excluded)";
        std::cout << '\n';
        excluded += r.excluded;
      }
      if (excluded) return kExitBudget;
    } else if (*transfer) {
      auto g = uhop::load_triples(tr_kb);
      auto tr = uhop::load_examples(tr_train, &g);
      auto va = uhop::load_examples(tr_valid, &g);
      auto te = uhop::load_examples(tr_test, &g);
      auto cfg = tr_train_opts.resolved();
      fs::path out(tr_out);
      fs::create_directories(out);
      write_resolved_config(transfer, out);
      auto rep = uhop::transfer_experiment(g, tr, va, te, tr_scorer.config(cfg.seed), cfg, tr_chain_hops);
      std::vector<uhop::EvalReport> reports{rep.uhop, rep.chain};
      for (const auto& r : reports) print_report(r);
      std::cout << "stop-decision share of uhop errors: " << rep.stop_error_share() << '\n';
      auto report = open_out(out / "report.csv");
      uhop::write_report_csv(report, reports);
      auto errors = open_out(out / "errors.csv");
      uhop::write_errors_csv(errors, reports);
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const uhop::BudgetError& e) {
    std::cerr << "budget exceeded: " << e.what() << '\n';
    return kExitBudget;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return 0;
}
