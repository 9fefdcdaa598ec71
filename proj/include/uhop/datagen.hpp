#pragma once

// Seeded dataset generators (Grid World, template-based multi-hop QA, uniform
// branching graphs) and the JSON-lines question format.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "uhop/error.hpp"
#include "uhop/kg_store.hpp"
#include "uhop/rng.hpp"

namespace uhop {

struct QaExample {
  std::vector<std::string> question_tokens;
  std::string topic;
  std::vector<std::string> path;
  std::string answer;

  bool operator==(const QaExample&) const = default;
};

/// Whitespace split; the question string in files is space-separated tokens.
inline std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

inline std::string to_jsonl(const QaExample& ex) {
  nlohmann::ordered_json j;
  j["question"] = join_tokens(ex.question_tokens);
  j["topic"] = ex.topic;
  j["path"] = ex.path;
  j["answer"] = ex.answer;
  return j.dump();
}

/// Folds transit over relation labels from the topic; returns the final
/// frontier (ascending ids). Throws ValidationError when a hop is missing.
inline std::vector<EntityId> execute_path(const KnowledgeGraph& g, std::string_view topic,
                                          const std::vector<std::string>& path) {
  if (!g.has_entity(topic)) throw ValidationError("unknown topic entity '" + std::string(topic) + "'");
  std::vector<EntityId> frontier{g.entity(topic)};
  for (const auto& label : path) {
    RelationId r;
    try {
      r = g.relation(label);
    } catch (const LookupError&) {
      throw ValidationError("unknown relation '" + label + "'");
    }
    std::vector<EntityId> next;
    for (EntityId e : frontier) {
      if (!g.has_relation(e, r)) continue;
      auto tails = g.transit(e, r);
      next.insert(next.end(), tails.begin(), tails.end());
    }
    std::sort(next.begin(), next.end());
    next.erase(std::unique(next.begin(), next.end()), next.end());
    if (next.empty()) throw ValidationError("relation '" + label + "' does not leave the frontier");
    frontier = std::move(next);
  }
  return frontier;
}

inline void validate_example(const KnowledgeGraph& g, const QaExample& ex) {
  if (ex.path.empty()) throw ValidationError("empty gold path");
  if (ex.question_tokens.empty()) throw ValidationError("empty question");
  auto frontier = execute_path(g, ex.topic, ex.path);
  if (!g.has_entity(ex.answer)) throw ValidationError("unknown answer entity '" + ex.answer + "'");
  if (!std::binary_search(frontier.begin(), frontier.end(), g.entity(ex.answer)))
    throw ValidationError("gold path does not reach answer '" + ex.answer + "'");
}

/// Order-preserving JSONL parse; with a graph, every record is replayed.
inline std::vector<QaExample> parse_examples(std::istream& in, const KnowledgeGraph* graph = nullptr) {
  std::vector<QaExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    QaExample ex;
    try {
      auto j = nlohmann::json::parse(line);
      ex.question_tokens = split_tokens(j.at("question").get<std::string>());
      ex.topic = j.at("topic").get<std::string>();
      ex.path = j.at("path").get<std::vector<std::string>>();
      ex.answer = j.at("answer").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed question record: ") + e.what(), lineno);
    }
    if (graph) {
      try {
        validate_example(*graph, ex);
      } catch (const ValidationError& e) {
        throw ValidationError(std::string(e.what()) + " (line " + std::to_string(lineno) + ")");
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<QaExample> load_examples(const std::string& path, const KnowledgeGraph* graph = nullptr) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open examples file '" + path + "'");
  return parse_examples(in, graph);
}

inline void save_examples(const std::vector<QaExample>& examples, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  for (const auto& ex : examples) out << to_jsonl(ex) << '\n';
}

/// Triple lines in generation order plus the three question splits.
struct Dataset {
  std::vector<std::array<std::string, 3>> triples;
  std::vector<QaExample> train, valid, test;

  KnowledgeGraph graph() const {
    KnowledgeGraph::Builder b;
    for (const auto& t : triples) b.add(t[0], t[1], t[2]);
    return std::move(b).build();
  }

  /// Writes kb.tsv, train.jsonl, valid.jsonl, test.jsonl into dir.
  void write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream kb(dir / "kb.tsv");
    if (!kb) throw Error("cannot write " + (dir / "kb.tsv").string());
    for (const auto& t : triples) kb << t[0] << '\t' << t[1] << '\t' << t[2] << '\n';
    save_examples(train, (dir / "train.jsonl").string());
    save_examples(valid, (dir / "valid.jsonl").string());
    save_examples(test, (dir / "test.jsonl").string());
  }
};

// ---------------------------------------------------------------------------
// Grid World

struct Direction {
  const char* name;
  int drow;
  int dcol;
};

/// Compass moves; row grows southward.
inline constexpr std::array<Direction, 8> kDirections{{
    {"North", -1, 0},
    {"NorthEast", -1, 1},
    {"East", 0, 1},
    {"SouthEast", 1, 1},
    {"South", 1, 0},
    {"SouthWest", 1, -1},
    {"West", 0, -1},
    {"NorthWest", -1, -1},
}};

inline std::string cell_label(int row, int col) {
  return "(" + std::to_string(row) + "," + std::to_string(col) + ")";
}

struct GridSpec {
  int side = 16;
  int min_hops = 2;
  int max_hops = 4;
  int train = 1000;
  int valid = 100;
  int test = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (side < 2) throw GenerationError("grid side must be >= 2");
    if (min_hops < 2 || max_hops < min_hops) throw GenerationError("hop bucket must satisfy 2 <= min <= max");
    if (train <= 0 || valid <= 0 || test <= 0) throw GenerationError("split counts must be positive");
  }
};

namespace detail {

inline std::vector<QaExample> grid_split(const GridSpec& spec, int count, std::string_view tag) {
  Rng rng = Rng::stream(spec.seed, tag);
  std::vector<QaExample> out;
  out.reserve(static_cast<std::size_t>(count));
  std::vector<const Direction*> legal;
  for (int n = 0; n < count; ++n) {
    int row = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.side)));
    int col = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.side)));
    int hops = static_cast<int>(rng.between(spec.min_hops, spec.max_hops));
    QaExample ex;
    ex.topic = cell_label(row, col);
    for (int h = 0; h < hops; ++h) {
      legal.clear();
      for (const Direction& d : kDirections) {
        int r = row + d.drow, c = col + d.dcol;
        if (r >= 0 && r < spec.side && c >= 0 && c < spec.side) legal.push_back(&d);
      }
      const Direction& d = *legal[rng.below(legal.size())];
      row += d.drow;
      col += d.dcol;
      ex.path.emplace_back(d.name);
    }
    ex.question_tokens = ex.path;
    ex.answer = cell_label(row, col);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace detail

inline std::vector<std::array<std::string, 3>> grid_triples(int side) {
  std::vector<std::array<std::string, 3>> triples;
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      for (const Direction& d : kDirections) {
        int r2 = r + d.drow, c2 = c + d.dcol;
        if (r2 < 0 || r2 >= side || c2 < 0 || c2 >= side) continue;
        triples.push_back({cell_label(r, c), d.name, cell_label(r2, c2)});
      }
    }
  }
  return triples;
}

/// Random start cell, uniform legal move per step, length uniform in the
/// bucket. Revisiting cells is allowed.
inline Dataset gen_gridworld(const GridSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.triples = grid_triples(spec.side);
  ds.train = detail::grid_split(spec, spec.train, "train");
  ds.valid = detail::grid_split(spec, spec.valid, "valid");
  ds.test = detail::grid_split(spec, spec.test, "test");
  return ds;
}

// ---------------------------------------------------------------------------
// Template-based multi-hop QA

struct HopMix {
  int hops = 2;
  int train = 0;
  int valid = 0;
  int test = 0;

  /// Train count with valid/test at an 8:1:1 ratio.
  static HopMix with_ratio(int hops, int train) {
    int held = (train + 7) / 8;
    return {hops, train, held, held};
  }
};

struct SynthSpec {
  int n_entities = 400;
  int n_relations = 24;
  int branching = 4;
  std::vector<HopMix> hop_mix{HopMix::with_ratio(2, 1275), HopMix::with_ratio(3, 1649)};
  int n_templates = 3;
  std::uint64_t seed = 0;

  int max_hops() const {
    int m = 0;
    for (const auto& h : hop_mix) m = std::max(m, h.hops);
    return m;
  }

  void validate() const {
    if (branching < 2) throw GenerationError("branching must be >= 2");
    if (n_relations < branching) throw GenerationError("n_relations must be >= branching");
    if (n_entities < 2) throw GenerationError("n_entities must be >= 2");
    if (n_templates < 1) throw GenerationError("n_templates must be >= 1");
    if (hop_mix.empty()) throw GenerationError("hop_mix is empty");
    for (const auto& h : hop_mix) {
      if (h.hops < 1) throw GenerationError("hop count must be >= 1");
      if (h.hops > n_relations) throw GenerationError("hop count exceeds distinct relations");
      if (h.train < 0 || h.valid < 0 || h.test < 0) throw GenerationError("negative split count");
    }
  }
};

namespace detail {

inline const std::vector<std::string>& domain_words() {
  static const std::vector<std::string> words{
      "people", "film", "location", "music", "book", "sports", "business", "education", "government",
      "award", "tv", "medicine"};
  return words;
}

inline const std::vector<std::string>& property_words() {
  static const std::vector<std::string> words{
      "spouse",     "nationality", "director",  "parents",   "children",   "religion",  "profession",
      "birthplace", "language",    "capital",   "currency",  "founder",    "author",    "genre",
      "producer",   "composer",    "employer",  "sibling",   "ethnicity",  "gender",    "team",
      "coach",      "mascot",      "anthem",    "president", "governor",   "architect", "publisher",
      "editor",     "instrument",  "label",     "manager",   "successor",  "predecessor", "headquarters",
      "campus",     "mayor",       "continent", "owner",     "inventor"};
  return words;
}

/// Pronounceable pseudo-word used as a synonym surface form.
inline std::string pseudo_word(Rng& rng) {
  static constexpr std::array<const char*, 20> syl{"ka", "lo", "mi", "ren", "to", "va", "zu", "bel", "dor", "fin",
                                                   "gar", "hu", "ix", "jo", "ne", "pa", "qui", "sa", "tor", "wen"};
  std::string w;
  int n = 2 + static_cast<int>(rng.below(2));
  for (int i = 0; i < n; ++i) w += syl[rng.below(syl.size())];
  return w;
}

struct SynthLexicon {
  std::vector<std::string> labels;
  std::vector<std::vector<std::string>> phrases;  // per relation, per template
};

inline SynthLexicon synth_lexicon(const SynthSpec& spec) {
  Rng rng = Rng::stream(spec.seed, "lexicon");
  SynthLexicon lex;
  std::set<std::string> used;
  const auto& domains = domain_words();
  const auto& props = property_words();
  for (int r = 0; r < spec.n_relations; ++r) {
    std::string prop;
    if (static_cast<std::size_t>(r) < props.size()) {
      prop = props[static_cast<std::size_t>(r)];
    } else {
      do prop = pseudo_word(rng);
      while (used.contains(prop));
    }
    used.insert(prop);
    lex.labels.push_back(domains[rng.below(domains.size())] + "." + prop);
    std::vector<std::string> phrases{prop};
    for (int t = 1; t < spec.n_templates; ++t) {
      std::string syn;
      do syn = pseudo_word(rng);
      while (used.contains(syn));
      used.insert(syn);
      phrases.push_back(syn);
    }
    lex.phrases.push_back(std::move(phrases));
  }
  return lex;
}

inline std::string mid_label(int index) {
  static constexpr char digits[] = "0123456789bcdfghjklmnpqrstvwxyz_";
  std::string s;
  unsigned v = static_cast<unsigned>(index);
  do {
    s.insert(s.begin(), digits[v % 32]);
    v /= 32;
  } while (v);
  return "m.0" + s;
}

/// Question frames differ between hop counts. Relation slots are filled
/// last-hop-first, the way nested "the X of the Y of" questions read.
inline std::vector<std::string> synth_question(int hops, const std::vector<std::string>& slot_words, Rng& rng) {
  // slot_words[i] is the phrase for hop i (0-based, path order).
  std::vector<std::string> q;
  auto nested = [&](const char* lead) {
    q = split_tokens(lead);
    for (int i = hops - 1; i >= 0; --i) {
      q.push_back(slot_words[static_cast<std::size_t>(i)]);
      q.push_back("of");
      if (i > 0) q.push_back("the");
    }
    q.push_back("<e>");
  };
  int frame = static_cast<int>(rng.below(2));
  if (hops == 2) {
    if (frame == 0) {
      nested("what is the");
    } else {
      q = {"<e>", "'s"};
      q.push_back(slot_words[0]);
      q.push_back("'s");
      q.push_back(slot_words[1]);
      q.push_back("is");
      q.push_back("what");
    }
  } else if (hops == 3) {
    if (frame == 0) {
      nested("tell me the");
    } else {
      q = {"which", "entity", "is", "the"};
      q.push_back(slot_words[2]);
      q.push_back("for");
      q.push_back(slot_words[1]);
      q.push_back("linked");
      q.push_back("by");
      q.push_back(slot_words[0]);
      q.push_back("to");
      q.push_back("<e>");
    }
  } else {
    nested("what is the");
  }
  return q;
}

/// True when every path from `topic` built only from gold relations (each at
/// most once) is a prefix of the gold path.
inline bool gold_is_evidence_unique(const KnowledgeGraph& g, EntityId topic, const std::vector<RelationId>& gold) {
  struct Frame {
    std::vector<EntityId> frontier;
    std::vector<RelationId> path;
  };
  std::vector<Frame> stack{{{topic}, {}}};
  while (!stack.empty()) {
    Frame f = std::move(stack.back());
    stack.pop_back();
    if (!std::equal(f.path.begin(), f.path.end(), gold.begin())) return false;
    if (f.path.size() == gold.size()) continue;
    for (RelationId r : gold) {
      if (std::find(f.path.begin(), f.path.end(), r) != f.path.end()) continue;
      std::vector<EntityId> next;
      for (EntityId e : f.frontier) {
        if (!g.has_relation(e, r)) continue;
        auto tails = g.transit(e, r);
        next.insert(next.end(), tails.begin(), tails.end());
      }
      if (next.empty()) continue;
      std::sort(next.begin(), next.end());
      next.erase(std::unique(next.begin(), next.end()), next.end());
      Frame child{std::move(next), f.path};
      child.path.push_back(r);
      stack.push_back(std::move(child));
    }
  }
  return true;
}

inline std::vector<QaExample> synth_split(const SynthSpec& spec, const SynthLexicon& lex, const KnowledgeGraph& g,
                                          std::string_view tag, int HopMix::*count) {
  std::vector<QaExample> out;
  for (const HopMix& mix : spec.hop_mix) {
    Rng rng = Rng::stream(spec.seed, std::string(tag) + "/" + std::to_string(mix.hops));
    const int wanted = mix.*count;
    long attempts = 0;
    int accepted = 0;
    while (accepted < wanted) {
      ++attempts;
      if (attempts > 1000 && attempts > 100L * (accepted + 1))
        throw GenerationError("synthetic spec infeasible: rejection rate above 99% for " +
                              std::to_string(mix.hops) + "-hop questions");
      EntityId topic{static_cast<std::uint32_t>(rng.below(g.num_entities()))};
      std::vector<RelationId> rels;
      EntityId cur = topic;
      bool ok = true;
      for (int h = 0; h < mix.hops && ok; ++h) {
        std::vector<const OutEdge*> options;
        for (const OutEdge& e : g.outbound(cur)) {
          if (std::find(rels.begin(), rels.end(), e.relation) == rels.end()) options.push_back(&e);
        }
        if (options.empty()) {
          ok = false;
          break;
        }
        const OutEdge& pick = *options[rng.below(options.size())];
        rels.push_back(pick.relation);
        cur = pick.tails[rng.below(pick.tails.size())];
      }
      if (!ok || !gold_is_evidence_unique(g, topic, rels)) continue;
      std::vector<std::string> slots;
      QaExample ex;
      for (RelationId r : rels) {
        const auto& ph = lex.phrases[r.index()];
        slots.push_back(ph[rng.below(ph.size())]);
        ex.path.push_back(g.relation_label(r));
      }
      ex.question_tokens = synth_question(mix.hops, slots, rng);
      ex.topic = g.entity_label(topic);
      ex.answer = g.entity_label(cur);
      out.push_back(std::move(ex));
      ++accepted;
    }
  }
  return out;
}

}  // namespace detail

/// Random graph where each entity has `branching` distinct relations with one
/// tail each; questions fill per-hop-count frames with per-relation synonyms.
/// Gold paths use distinct relations and are rejected unless no other path
/// from the topic can be assembled from the question's relations.
inline Dataset gen_synth(const SynthSpec& spec) {
  spec.validate();
  Dataset ds;
  auto lex = detail::synth_lexicon(spec);
  Rng rng = Rng::stream(spec.seed, "graph");
  std::vector<std::uint32_t> rel_order(static_cast<std::size_t>(spec.n_relations));
  for (std::size_t i = 0; i < rel_order.size(); ++i) rel_order[i] = static_cast<std::uint32_t>(i);
  for (int e = 0; e < spec.n_entities; ++e) {
    rng.shuffle(rel_order);
    for (int k = 0; k < spec.branching; ++k) {
      int tail;
      do tail = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.n_entities)));
      while (tail == e);
      ds.triples.push_back(
          {detail::mid_label(e), lex.labels[rel_order[static_cast<std::size_t>(k)]], detail::mid_label(tail)});
    }
  }
  KnowledgeGraph g = ds.graph();
  ds.train = detail::synth_split(spec, lex, g, "train", &HopMix::train);
  ds.valid = detail::synth_split(spec, lex, g, "valid", &HopMix::valid);
  ds.test = detail::synth_split(spec, lex, g, "test", &HopMix::test);
  return ds;
}

// ---------------------------------------------------------------------------
// Uniform branching graphs for search-space accounting

struct UniformSpec {
  int n_entities = 512;
  int branching = 8;
  std::vector<HopMix> hop_mix{{2, 0, 0, 50}, {3, 0, 0, 50}, {4, 0, 0, 50}};
  std::uint64_t seed = 0;
};

/// Every entity carries the same `branching` relations (rel_0..), each with a
/// single random tail, so there are exactly n^l relation paths of length l.
inline Dataset gen_uniform(const UniformSpec& spec) {
  if (spec.branching < 1 || spec.n_entities < 2) throw GenerationError("invalid uniform spec");
  Dataset ds;
  Rng rng = Rng::stream(spec.seed, "graph");
  auto ent = [](int i) { return "n" + std::to_string(i); };
  for (int e = 0; e < spec.n_entities; ++e) {
    for (int k = 0; k < spec.branching; ++k) {
      int tail = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.n_entities)));
      ds.triples.push_back({ent(e), "rel_" + std::to_string(k), ent(tail)});
    }
  }
  KnowledgeGraph g = ds.graph();
  auto split = [&](std::string_view tag, int HopMix::*count) {
    std::vector<QaExample> out;
    for (const HopMix& mix : spec.hop_mix) {
      Rng r = Rng::stream(spec.seed, std::string(tag) + "/" + std::to_string(mix.hops));
      for (int n = 0; n < mix.*count; ++n) {
        EntityId cur{static_cast<std::uint32_t>(r.below(g.num_entities()))};
        QaExample ex;
        ex.topic = g.entity_label(cur);
        for (int h = 0; h < mix.hops; ++h) {
          const OutEdge& edge = g.outbound(cur)[r.below(g.outbound(cur).size())];
          ex.path.push_back(g.relation_label(edge.relation));
          cur = edge.tails.front();
        }
        ex.question_tokens = ex.path;
        ex.answer = g.entity_label(cur);
        out.push_back(std::move(ex));
      }
    }
    return out;
  };
  ds.train = split("train", &HopMix::train);
  ds.valid = split("valid", &HopMix::valid);
  ds.test = split("test", &HopMix::test);
  return ds;
}

}  // namespace uhop
