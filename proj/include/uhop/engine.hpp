#pragma once

// Hop-by-hop relation path search with a comparative stop decision, and the
// exhaustive relation-chain baseline it is measured against.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uhop/error.hpp"
#include "uhop/kg_store.hpp"

namespace uhop {

/// Ordered relation sequence; grows by one relation per accepted hop.
class RelationPath {
 public:
  RelationPath() = default;
  RelationPath(std::initializer_list<RelationId> rels) : rels_(rels) {}
  explicit RelationPath(std::vector<RelationId> rels) : rels_(std::move(rels)) {}

  RelationPath concat(RelationId r) const {
    RelationPath out = *this;
    out.rels_.push_back(r);
    return out;
  }

  std::size_t size() const noexcept { return rels_.size(); }
  bool empty() const noexcept { return rels_.empty(); }
  RelationId operator[](std::size_t i) const { return rels_[i]; }
  auto begin() const noexcept { return rels_.begin(); }
  auto end() const noexcept { return rels_.end(); }
  std::span<const RelationId> span() const noexcept { return rels_; }
  operator std::span<const RelationId>() const noexcept { return rels_; }
  const std::vector<RelationId>& relations() const noexcept { return rels_; }

  bool operator==(const RelationPath&) const = default;

 private:
  std::vector<RelationId> rels_;
};

inline RelationPath path_from_labels(const KnowledgeGraph& g, const std::vector<std::string>& labels) {
  std::vector<RelationId> rels;
  rels.reserve(labels.size());
  for (const auto& l : labels) rels.push_back(g.relation(l));
  return RelationPath(std::move(rels));
}

inline std::vector<std::string> path_labels(const KnowledgeGraph& g, const RelationPath& p) {
  std::vector<std::string> out;
  for (RelationId r : p) out.push_back(g.relation_label(r));
  return out;
}

/// What the engine needs from a scorer: encode a question once, score
/// question/path pairs, and optionally refresh the question after a hop.
template <typename S>
concept PathScorer = requires(const S& s, typename S::Question& q, std::span<const std::string> tokens,
                              std::span<const RelationId> path) {
  { s.encode(tokens) } -> std::same_as<typename S::Question>;
  { s.score(q, path) } -> std::convertible_to<double>;
  s.update(q, path);
};

/// Deduplicated outbound relations of a frontier, ascending id.
inline std::vector<RelationId> frontier_relations(const KnowledgeGraph& g, std::span<const EntityId> frontier) {
  std::vector<RelationId> out;
  for (EntityId e : frontier) {
    for (const OutEdge& edge : g.outbound(e)) out.push_back(edge.relation);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Union of the tails of r over the frontier entities that carry r.
inline std::vector<EntityId> transit_frontier(const KnowledgeGraph& g, std::span<const EntityId> frontier,
                                              RelationId r) {
  std::vector<EntityId> out;
  for (EntityId e : frontier) {
    if (!g.has_relation(e, r)) continue;
    auto tails = g.transit(e, r);
    out.insert(out.end(), tails.begin(), tails.end());
  }
  if (out.empty()) throw TransitError("no frontier entity carries relation '" + g.relation_label(r) + "'");
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

struct EngineConfig {
  int hop_cap = 16;
  bool use_dynamic_question = false;

  void validate() const {
    if (hop_cap < 1) throw Error("hop_cap must be >= 1");
  }
};

struct CandidateSet {
  int hop = 0;
  RelationPath base;
  std::vector<RelationId> extensions;
  std::vector<double> scores;
};

enum class Decision { stop, continue_search };

struct HopRecord {
  CandidateSet extraction;
  RelationId chosen;
  double path_score = 0.0;                   // extracted path, re-scored for the stop decision
  std::optional<double> best_extension;      // absent at a sink
  CandidateSet termination;                  // extensions from the new frontier
  Decision decision = Decision::stop;
};

struct SearchTrace {
  std::vector<HopRecord> hops;
  std::size_t scored_candidate_count = 0;
  bool capped = false;
  bool forced_stop = false;
};

struct SearchResult {
  RelationPath path;
  SearchTrace trace;
};

template <PathScorer S>
CandidateSet score_candidates(const S& scorer, typename S::Question& q, const RelationPath& base,
                              std::vector<RelationId> extensions, int hop) {
  CandidateSet c{hop, base, std::move(extensions), {}};
  c.scores.reserve(c.extensions.size());
  for (RelationId r : c.extensions) c.scores.push_back(scorer.score(q, base.concat(r)));
  return c;
}

struct Extraction {
  RelationId chosen;
  CandidateSet candidates;
};

/// argmax over base:r for r in the frontier's outbound relations; ties go to
/// the lowest relation id. Empty when the frontier is a sink.
template <PathScorer S>
std::optional<Extraction> extract_hop(const S& scorer, typename S::Question& q, const RelationPath& base,
                                      std::span<const EntityId> frontier, const KnowledgeGraph& g, int hop) {
  auto rels = frontier_relations(g, frontier);
  if (rels.empty()) return std::nullopt;
  CandidateSet c = score_candidates(scorer, q, base, std::move(rels), hop);
  std::size_t best = 0;
  for (std::size_t i = 1; i < c.scores.size(); ++i) {
    if (c.scores[i] > c.scores[best]) best = i;
  }
  RelationId chosen = c.extensions[best];
  return Extraction{chosen, std::move(c)};
}

struct Termination {
  Decision decision = Decision::stop;
  bool sink = false;
  double path_score = 0.0;
  std::optional<double> best_extension;
  CandidateSet next;
};

/// Stops when no one-relation extension scores strictly above the extracted
/// path; a sink frontier always stops.
template <PathScorer S>
Termination decide_termination(const S& scorer, typename S::Question& q, const RelationPath& extracted,
                               std::span<const EntityId> frontier, const KnowledgeGraph& g, int hop) {
  if (extracted.empty()) throw Error("termination decision needs a non-empty path");
  Termination t;
  t.path_score = scorer.score(q, extracted);
  auto rels = frontier_relations(g, frontier);
  if (rels.empty()) {
    t.sink = true;
    t.next = CandidateSet{hop + 1, extracted, {}, {}};
    return t;
  }
  t.next = score_candidates(scorer, q, extracted, std::move(rels), hop + 1);
  double best = *std::max_element(t.next.scores.begin(), t.next.scores.end());
  t.best_extension = best;
  t.decision = t.path_score >= best ? Decision::stop : Decision::continue_search;
  return t;
}

template <PathScorer S>
SearchResult run_uhop(const S& scorer, std::span<const std::string> question, EntityId topic,
                      const KnowledgeGraph& g, const EngineConfig& config = {}) {
  config.validate();
  auto q = scorer.encode(question);
  std::vector<EntityId> frontier{topic};
  SearchResult result;
  auto ext = extract_hop(scorer, q, result.path, frontier, g, 1);
  if (!ext) throw Error("topic entity '" + g.entity_label(topic) + "' has no outbound relations");
  for (int hop = 1;; ++hop) {
    HopRecord rec;
    rec.chosen = ext->chosen;
    rec.extraction = std::move(ext->candidates);
    result.trace.scored_candidate_count += rec.extraction.extensions.size();
    result.path = result.path.concat(rec.chosen);
    frontier = transit_frontier(g, frontier, rec.chosen);

    Termination td = decide_termination(scorer, q, result.path, frontier, g, hop);
    result.trace.scored_candidate_count += 1 + td.next.extensions.size();
    rec.path_score = td.path_score;
    rec.best_extension = td.best_extension;
    rec.decision = td.decision;
    rec.termination = std::move(td.next);
    result.trace.hops.push_back(std::move(rec));

    if (td.sink) {
      result.trace.forced_stop = true;
      break;
    }
    if (td.decision == Decision::stop) break;
    if (hop >= config.hop_cap) {
      result.trace.capped = true;
      break;
    }
    if (config.use_dynamic_question) scorer.update(q, result.path);
    ext = extract_hop(scorer, q, result.path, frontier, g, hop + 1);
  }
  return result;
}

/// All distinct relation paths of length 1..max_hops from the topic, grouped
/// by length, each length in lexicographic relation-id order.
inline std::vector<RelationPath> enumerate_paths(const KnowledgeGraph& g, EntityId topic, int max_hops,
                                                 std::size_t budget = 1'000'000) {
  if (max_hops < 1) throw Error("max_hops must be >= 1");
  struct Node {
    RelationPath path;
    std::vector<EntityId> frontier;
  };
  std::vector<RelationPath> out;
  std::vector<Node> layer{{{}, {topic}}};
  for (int len = 1; len <= max_hops && !layer.empty(); ++len) {
    std::vector<Node> next;
    for (const Node& n : layer) {
      for (RelationId r : frontier_relations(g, n.frontier)) {
        if (out.size() >= budget)
          throw BudgetError("relation-chain enumeration exceeded budget of " + std::to_string(budget) + " paths");
        RelationPath p = n.path.concat(r);
        out.push_back(p);
        if (len < max_hops) next.push_back({std::move(p), transit_frontier(g, n.frontier, r)});
      }
    }
    layer = std::move(next);
  }
  return out;
}

struct ChainResult {
  RelationPath path;
  std::size_t scored_candidate_count = 0;
};

/// Scores every path of length 1..max_hops and returns the first argmax.
template <PathScorer S>
ChainResult run_chain_baseline(const S& scorer, std::span<const std::string> question, EntityId topic,
                               const KnowledgeGraph& g, int max_hops, std::size_t budget = 1'000'000) {
  auto paths = enumerate_paths(g, topic, max_hops, budget);
  if (paths.empty()) throw Error("topic entity '" + g.entity_label(topic) + "' has no outbound relations");
  auto q = scorer.encode(question);
  ChainResult res;
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& p : paths) {
    double s = scorer.score(q, p);
    if (s > best) {
      best = s;
      res.path = p;
    }
  }
  res.scored_candidate_count = paths.size();
  return res;
}

// ---------------------------------------------------------------------------
// Reference scorers with no parameters.

/// Scores a gold prefix of length i as i / |gold| and anything else 0, so
/// each correct extension strictly beats its prefix.
class PrefixOracleScorer {
 public:
  struct Question {};

  explicit PrefixOracleScorer(RelationPath gold) : gold_(std::move(gold)) {}

  Question encode(std::span<const std::string>) const { return {}; }

  double score(Question&, std::span<const RelationId> path) const {
    if (path.size() > gold_.size()) return 0.0;
    if (!std::equal(path.begin(), path.end(), gold_.begin())) return 0.0;
    return static_cast<double>(path.size()) / static_cast<double>(gold_.size());
  }

  void update(Question&, std::span<const RelationId>) const {}

 private:
  RelationPath gold_;
};

class ConstantScorer {
 public:
  struct Question {};

  explicit ConstantScorer(double value = 0.0) : value_(value) {}
  Question encode(std::span<const std::string>) const { return {}; }
  double score(Question&, std::span<const RelationId>) const { return value_; }
  void update(Question&, std::span<const RelationId>) const {}

 private:
  double value_;
};

// ---------------------------------------------------------------------------
// Trace export

inline double round6(double x) { return std::round(x * 1e6) / 1e6; }

inline nlohmann::ordered_json trace_to_json(const KnowledgeGraph& g, const SearchResult& r) {
  using nlohmann::ordered_json;
  auto candidates = [&](const CandidateSet& c) {
    ordered_json j = ordered_json::array();
    for (std::size_t i = 0; i < c.extensions.size(); ++i)
      j.push_back({{"relation", g.relation_label(c.extensions[i])}, {"score", round6(c.scores[i])}});
    return j;
  };
  ordered_json hops = ordered_json::array();
  for (const HopRecord& h : r.trace.hops) {
    ordered_json jh;
    jh["hop"] = h.extraction.hop;
    jh["candidates"] = candidates(h.extraction);
    jh["chosen"] = g.relation_label(h.chosen);
    jh["path_score"] = round6(h.path_score);
    jh["best_extension_score"] = h.best_extension ? ordered_json(round6(*h.best_extension)) : ordered_json(nullptr);
    jh["extensions"] = candidates(h.termination);
    jh["decision"] = h.decision == Decision::stop ? "stop" : "continue";
    hops.push_back(std::move(jh));
  }
  ordered_json j;
  j["path"] = path_labels(g, r.path);
  j["hops"] = std::move(hops);
  j["scored_candidates"] = r.trace.scored_candidate_count;
  j["capped"] = r.trace.capped;
  j["forced_stop"] = r.trace.forced_stop;
  return j;
}

}  // namespace uhop
