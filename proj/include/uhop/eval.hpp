#pragma once

// Path accuracy, per-hop error attribution (wrong relation vs wrong stop
// decision), search-space accounting and the cross-length transfer run.

#include <chrono>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uhop/datagen.hpp"
#include "uhop/engine.hpp"
#include "uhop/error.hpp"
#include "uhop/kg_store.hpp"
#include "uhop/scorer.hpp"
#include "uhop/trainer.hpp"

namespace uhop {

enum class ErrorKind { correct, relation, stop_early, stop_late };

struct Attribution {
  ErrorKind kind = ErrorKind::correct;
  int hop = 0;  // 1-based position of the first missing, extra or wrong relation
};

/// Classifies a prediction against the gold path. The hop is one past the
/// longest common prefix. Capped searches count as late stops.
inline Attribution attribute_error(const RelationPath& predicted, const RelationPath& gold, bool capped = false) {
  std::size_t common = 0;
  while (common < predicted.size() && common < gold.size() && predicted[common] == gold[common]) ++common;
  const int hop = static_cast<int>(common) + 1;
  if (capped) return {ErrorKind::stop_late, hop};
  if (common == predicted.size() && common == gold.size()) return {ErrorKind::correct, 0};
  if (common < predicted.size() && common < gold.size()) return {ErrorKind::relation, hop};
  if (predicted.size() < gold.size()) return {ErrorKind::stop_early, hop};
  return {ErrorKind::stop_late, hop};
}

inline Attribution attribute_error(const SearchResult& predicted, const RelationPath& gold) {
  return attribute_error(predicted.path, gold, predicted.trace.capped);
}

struct HopErrors {
  std::size_t relation = 0;
  std::size_t stop_early = 0;
  std::size_t stop_late = 0;
  std::size_t stop() const { return stop_early + stop_late; }
};

struct EvalReport {
  std::string split;
  std::size_t n_examples = 0;
  std::size_t correct = 0;
  std::vector<HopErrors> per_hop;  // index hop - 1
  double mean_scored_candidates = 0.0;
  double seconds = 0.0;

  double path_accuracy() const {
    return n_examples ? static_cast<double>(correct) / static_cast<double>(n_examples) : 0.0;
  }
  std::size_t relation_errors() const {
    std::size_t n = 0;
    for (const auto& h : per_hop) n += h.relation;
    return n;
  }
  std::size_t stop_early_errors() const {
    std::size_t n = 0;
    for (const auto& h : per_hop) n += h.stop_early;
    return n;
  }
  std::size_t stop_late_errors() const {
    std::size_t n = 0;
    for (const auto& h : per_hop) n += h.stop_late;
    return n;
  }
  std::size_t stop_errors() const { return stop_early_errors() + stop_late_errors(); }

  void record(const Attribution& a) {
    ++n_examples;
    if (a.kind == ErrorKind::correct) {
      ++correct;
      return;
    }
    if (per_hop.size() < static_cast<std::size_t>(a.hop)) per_hop.resize(static_cast<std::size_t>(a.hop));
    HopErrors& h = per_hop[static_cast<std::size_t>(a.hop - 1)];
    if (a.kind == ErrorKind::relation) ++h.relation;
    if (a.kind == ErrorKind::stop_early) ++h.stop_early;
    if (a.kind == ErrorKind::stop_late) ++h.stop_late;
  }
};

/// Runs the hop-by-hop search per example; `make_scorer(example)` supplies
/// the scorer (a shared neural scorer, or a per-example oracle). Traces go to
/// `traces` as JSON lines when given.
template <typename MakeScorer>
EvalReport evaluate_with(MakeScorer&& make_scorer, std::span<const QaExample> data, const KnowledgeGraph& g,
                         const EngineConfig& config, std::ostream* traces = nullptr, std::string split = "test") {
  auto t0 = std::chrono::steady_clock::now();
  EvalReport rep;
  rep.split = std::move(split);
  double candidates = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const QaExample& ex = data[i];
    RelationPath gold = path_from_labels(g, ex.path);
    auto&& scorer = make_scorer(ex);
    SearchResult res = run_uhop(scorer, ex.question_tokens, g.entity(ex.topic), g, config);
    Attribution a = attribute_error(res, gold);
    rep.record(a);
    candidates += static_cast<double>(res.trace.scored_candidate_count);
    if (traces) {
      nlohmann::ordered_json j;
      j["index"] = i;
      j["question"] = join_tokens(ex.question_tokens);
      j["topic"] = ex.topic;
      j["gold"] = ex.path;
      auto t = trace_to_json(g, res);
      for (auto& [k, v] : t.items()) j[k] = v;
      j["outcome"] = a.kind == ErrorKind::correct      ? "correct"
                     : a.kind == ErrorKind::relation   ? "RE"
                     : a.kind == ErrorKind::stop_early ? "TD_early"
                                                       : "TD_late";
      *traces << j.dump() << '\n';
    }
  }
  if (!data.empty()) rep.mean_scored_candidates = candidates / static_cast<double>(data.size());
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

inline EvalReport evaluate(const ScorerParams& params, const Vocab& vocab, const RelationLexicon& lex,
                           std::span<const QaExample> data, const KnowledgeGraph& g, const EngineConfig& config,
                           std::ostream* traces = nullptr, std::string split = "test") {
  NeuralScorer scorer(params, vocab, lex);
  return evaluate_with([&](const QaExample&) -> const NeuralScorer& { return scorer; }, data, g, config, traces,
                       std::move(split));
}

inline EvalReport evaluate_oracle(std::span<const QaExample> data, const KnowledgeGraph& g,
                                  const EngineConfig& config, std::ostream* traces = nullptr,
                                  std::string split = "test") {
  return evaluate_with([&](const QaExample& ex) { return PrefixOracleScorer(path_from_labels(g, ex.path)); }, data,
                       g, config, traces, std::move(split));
}

/// Relation-chain baseline over the same data: argmax over all paths of
/// length 1..max_hops.
inline EvalReport evaluate_chain(const ScorerParams& params, const Vocab& vocab, const RelationLexicon& lex,
                                 std::span<const QaExample> data, const KnowledgeGraph& g, int max_hops,
                                 std::size_t budget = 1'000'000, std::string split = "test") {
  auto t0 = std::chrono::steady_clock::now();
  NeuralScorer scorer(params, vocab, lex);
  EvalReport rep;
  rep.split = std::move(split);
  double candidates = 0.0;
  for (const auto& ex : data) {
    ChainResult res = run_chain_baseline(scorer, ex.question_tokens, g.entity(ex.topic), g, max_hops, budget);
    rep.record(attribute_error(res.path, path_from_labels(g, ex.path)));
    candidates += static_cast<double>(res.scored_candidate_count);
  }
  if (!data.empty()) rep.mean_scored_candidates = candidates / static_cast<double>(data.size());
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

// ---------------------------------------------------------------------------
// Search-space accounting

struct SpaceMode {
  enum class Kind { uhop, chain } kind = Kind::uhop;
  int max_hops = 0;  // chain only

  static SpaceMode uhop() { return {Kind::uhop, 0}; }
  static SpaceMode chain(int l) { return {Kind::chain, l}; }
  std::string name() const { return kind == Kind::uhop ? "uhop" : "chain" + std::to_string(max_hops); }
};

struct SpaceRow {
  std::size_t index = 0;
  std::size_t gold_hops = 0;
  std::optional<std::size_t> count;  // empty on budget overflow
};

struct SpaceReport {
  SpaceMode mode;
  std::vector<SpaceRow> rows;
  double mean = 0.0;
  std::size_t excluded = 0;
};

/// uhop mode counts scored candidates from search traces (prefix-oracle
/// scorer unless `scorer` is given); chain mode counts enumerated paths.
inline SpaceReport count_search_space(std::span<const QaExample> data, const KnowledgeGraph& g, SpaceMode mode,
                                      const NeuralScorer* scorer = nullptr, const EngineConfig& config = {},
                                      std::size_t budget = 1'000'000) {
  SpaceReport rep;
  rep.mode = mode;
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const QaExample& ex = data[i];
    SpaceRow row{i, ex.path.size(), std::nullopt};
    EntityId topic = g.entity(ex.topic);
    if (mode.kind == SpaceMode::Kind::uhop) {
      SearchResult res = scorer ? run_uhop(*scorer, ex.question_tokens, topic, g, config)
                                : run_uhop(PrefixOracleScorer(path_from_labels(g, ex.path)), ex.question_tokens,
                                           topic, g, config);
      row.count = res.trace.scored_candidate_count;
    } else {
      try {
        row.count = enumerate_paths(g, topic, mode.max_hops, budget).size();
      } catch (const BudgetError&) {
        row.count.reset();
      }
    }
    if (row.count) {
      sum += static_cast<double>(*row.count);
      ++counted;
    } else {
      ++rep.excluded;
    }
    rep.rows.push_back(row);
  }
  if (counted) rep.mean = sum / static_cast<double>(counted);
  return rep;
}

// ---------------------------------------------------------------------------
// Train on one path length, test on another

struct TransferReport {
  EvalReport uhop;
  EvalReport chain;
  FitResult uhop_fit;
  FitResult chain_fit;

  /// Share of UHop errors that are stop decisions.
  double stop_error_share() const {
    std::size_t errs = uhop.n_examples - uhop.correct;
    return errs ? static_cast<double>(uhop.stop_errors()) / static_cast<double>(errs) : 0.0;
  }
};

/// Trains the hop-by-hop model and a relation-chain baseline (paths up to
/// `chain_max_hops`) on the same data with the same settings, then tests both.
inline TransferReport transfer_experiment(const KnowledgeGraph& g, std::span<const QaExample> train,
                                          std::span<const QaExample> valid, std::span<const QaExample> test,
                                          const ScorerConfig& scorer_cfg, const TrainConfig& train_cfg,
                                          int chain_max_hops = 3) {
  Vocab vocab = Vocab::build(g, train);
  RelationLexicon lex = RelationLexicon::build(g, vocab);
  TrainContext ctx{&g, &vocab, &lex};
  ScorerParams init = ScorerParams::init(scorer_cfg, vocab.size(), g.num_relations());
  TransferReport rep;
  TrainConfig uhop_cfg = train_cfg;
  uhop_cfg.chain_max_hops = 0;
  rep.uhop_fit = fit(init, ctx, train, valid, uhop_cfg);
  rep.uhop = evaluate(rep.uhop_fit.best, vocab, lex, test, g, uhop_cfg.engine(), nullptr, "uhop");
  TrainConfig chain_cfg = train_cfg;
  chain_cfg.chain_max_hops = chain_max_hops;
  rep.chain_fit = fit(init, ctx, train, valid, chain_cfg);
  rep.chain = evaluate_chain(rep.chain_fit.best, vocab, lex, test, g, chain_max_hops, chain_cfg.chain_budget, "chain");
  return rep;
}

// ---------------------------------------------------------------------------
// CSV output

inline void write_report_csv(std::ostream& out, std::span<const EvalReport> reports) {
  out << "split,n_examples,correct,path_accuracy,re_errors,td_early,td_late,td_errors,mean_scored_candidates,seconds\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& r : reports)
    out << r.split << ',' << r.n_examples << ',' << r.correct << ',' << r.path_accuracy() << ','
        << r.relation_errors() << ',' << r.stop_early_errors() << ',' << r.stop_late_errors() << ','
        << r.stop_errors() << ',' << r.mean_scored_candidates << ',' << r.seconds << '\n';
}

/// One row per (split, hop): RE, TD_early, TD_late and the merged TD column.
inline void write_errors_csv(std::ostream& out, std::span<const EvalReport> reports) {
  out << "split,hop,RE,TD_early,TD_late,TD\n";
  for (const auto& r : reports)
    for (std::size_t h = 0; h < r.per_hop.size(); ++h) {
      const auto& e = r.per_hop[h];
      out << r.split << ',' << h + 1 << ',' << e.relation << ',' << e.stop_early << ',' << e.stop_late << ','
          << e.stop() << '\n';
    }
}

inline void write_space_csv(std::ostream& out, std::span<const SpaceReport> reports) {
  out << "mode,example,gold_hops,count,overflow\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& r : reports) {
    for (const auto& row : r.rows)
      out << r.mode.name() << ',' << row.index << ',' << row.gold_hops << ',' << (row.count ? *row.count : 0) << ','
          << (row.count ? 0 : 1) << '\n';
    out << r.mode.name() << ",mean,," << r.mean << ',' << r.excluded << '\n';
  }
}

}  // namespace uhop
