#pragma once

// Immutable triple store with a per-entity outbound-relation index.

#include <algorithm>
#include <cctype>
#include <compare>
#include <cstdint>
#include <fstream>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <set>
#include <vector>

#include "uhop/error.hpp"

namespace uhop {

template <typename Tag>
struct DenseId {
  std::uint32_t value = 0;

  constexpr auto operator<=>(const DenseId&) const = default;
  constexpr std::size_t index() const noexcept { return value; }
};

struct EntityTag {};
struct RelationTag {};
using EntityId = DenseId<EntityTag>;
using RelationId = DenseId<RelationTag>;

struct Triple {
  EntityId head;
  RelationId relation;
  EntityId tail;

  constexpr auto operator<=>(const Triple&) const = default;
};

/// One outbound relation of an entity with all of its tails (ascending ids).
struct OutEdge {
  RelationId relation;
  std::vector<EntityId> tails;
};

/// Splits a relation label on '.', '_', '/' and lowercases each piece.
inline std::vector<std::string> tokenize_relation(std::string_view label) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : label) {
    if (c == '.' || c == '_' || c == '/') {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

class GraphBuilder;

class KnowledgeGraph {
 public:
  /// Collects labelled triples into an immutable graph.
  using Builder = GraphBuilder;

  std::size_t num_entities() const noexcept { return entity_labels_.size(); }
  std::size_t num_relations() const noexcept { return relation_labels_.size(); }
  std::size_t num_triples() const noexcept { return triples_.size(); }
  std::span<const Triple> triples() const noexcept { return triples_; }

  const std::string& entity_label(EntityId e) const {
    check(e);
    return entity_labels_[e.index()];
  }
  const std::string& relation_label(RelationId r) const {
    check(r);
    return relation_labels_[r.index()];
  }
  const std::vector<std::string>& relation_tokens(RelationId r) const {
    check(r);
    return relation_tokens_[r.index()];
  }

  EntityId entity(std::string_view label) const {
    auto it = entity_index_.find(std::string(label));
    if (it == entity_index_.end()) throw LookupError("unknown entity '" + std::string(label) + "'");
    return EntityId{it->second};
  }
  RelationId relation(std::string_view label) const {
    auto it = relation_index_.find(std::string(label));
    if (it == relation_index_.end()) throw LookupError("unknown relation '" + std::string(label) + "'");
    return RelationId{it->second};
  }
  bool has_entity(std::string_view label) const {
    return entity_index_.contains(std::string(label));
  }

  /// Outbound relations of e, ascending relation id, each with all tails.
  std::span<const OutEdge> outbound(EntityId e) const {
    check(e);
    return outbound_[e.index()];
  }

  /// Tails of (e, r), ascending id. Throws TransitError when absent.
  std::span<const EntityId> transit(EntityId e, RelationId r) const {
    for (const OutEdge& edge : outbound(e)) {
      if (edge.relation == r) return edge.tails;
    }
    throw TransitError("entity '" + entity_label(e) + "' has no relation '" +
                       (r.index() < relation_labels_.size() ? relation_labels_[r.index()]
                                                            : std::to_string(r.value)) +
                       "'");
  }

  bool has_relation(EntityId e, RelationId r) const {
    for (const OutEdge& edge : outbound(e)) {
      if (edge.relation == r) return true;
    }
    return false;
  }

  /// Canonical TSV: triples sorted by (head, relation, tail) id.
  void write_tsv(std::ostream& out) const {
    std::vector<Triple> sorted = triples_;
    std::sort(sorted.begin(), sorted.end());
    for (const Triple& t : sorted) {
      out << entity_labels_[t.head.index()] << '\t' << relation_labels_[t.relation.index()] << '\t'
          << entity_labels_[t.tail.index()] << '\n';
    }
  }

 private:
  void check(EntityId e) const {
    if (e.index() >= entity_labels_.size())
      throw LookupError("entity id " + std::to_string(e.value) + " out of range");
  }
  void check(RelationId r) const {
    if (r.index() >= relation_labels_.size())
      throw LookupError("relation id " + std::to_string(r.value) + " out of range");
  }

  void index() {
    std::vector<Triple> sorted = triples_;
    std::sort(sorted.begin(), sorted.end());
    outbound_.assign(entity_labels_.size(), {});
    for (const Triple& t : sorted) {
      auto& edges = outbound_[t.head.index()];
      if (edges.empty() || edges.back().relation != t.relation) edges.push_back({t.relation, {}});
      edges.back().tails.push_back(t.tail);
    }
  }

  std::vector<std::string> entity_labels_;
  std::unordered_map<std::string, std::uint32_t> entity_index_;
  std::vector<std::string> relation_labels_;
  std::vector<std::vector<std::string>> relation_tokens_;
  std::unordered_map<std::string, std::uint32_t> relation_index_;
  std::vector<Triple> triples_;
  std::vector<std::vector<OutEdge>> outbound_;

  friend class GraphBuilder;
};


/// Ids are handed out in first-appearance order (head, relation, tail within
/// a line); duplicate triples are dropped.
class GraphBuilder {
 public:
  void add(std::string_view head, std::string_view relation, std::string_view tail) {
    EntityId h{intern(g_.entity_index_, g_.entity_labels_, head)};
    RelationId r{intern_relation(relation)};
    EntityId t{intern(g_.entity_index_, g_.entity_labels_, tail)};
    Triple tr{h, r, t};
    if (seen_.insert(tr).second) g_.triples_.push_back(tr);
  }

  /// Registers an entity without triples (e.g. an isolated cell).
  EntityId add_entity(std::string_view label) {
    return EntityId{intern(g_.entity_index_, g_.entity_labels_, label)};
  }

  KnowledgeGraph build() && {
    g_.index();
    return std::move(g_);
  }

 private:
  static std::uint32_t intern(std::unordered_map<std::string, std::uint32_t>& index,
                              std::vector<std::string>& labels, std::string_view label) {
    auto [it, inserted] =
        index.try_emplace(std::string(label), static_cast<std::uint32_t>(labels.size()));
    if (inserted) labels.emplace_back(label);
    return it->second;
  }

  std::uint32_t intern_relation(std::string_view label) {
    std::uint32_t id = intern(g_.relation_index_, g_.relation_labels_, label);
    if (g_.relation_tokens_.size() < g_.relation_labels_.size()) {
      auto tokens = tokenize_relation(label);
      if (tokens.empty()) throw ParseError("relation label has no tokens: '" + std::string(label) + "'");
      g_.relation_tokens_.push_back(std::move(tokens));
    }
    return id;
  }

  KnowledgeGraph g_;
  std::set<Triple> seen_;
};


/// Parses `head<TAB>relation<TAB>tail` lines. Empty input gives an empty graph.
inline KnowledgeGraph parse_triples(std::istream& in) {
  KnowledgeGraph::Builder builder;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::string_view view(line);
    auto first = view.find('\t');
    auto second = first == std::string_view::npos ? first : view.find('\t', first + 1);
    if (second == std::string_view::npos || view.find('\t', second + 1) != std::string_view::npos)
      throw ParseError("expected 3 tab-separated fields", lineno);
    auto head = view.substr(0, first);
    auto rel = view.substr(first + 1, second - first - 1);
    auto tail = view.substr(second + 1);
    if (head.empty() || rel.empty() || tail.empty()) throw ParseError("empty field", lineno);
    try {
      builder.add(head, rel, tail);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return std::move(builder).build();
}

inline KnowledgeGraph load_triples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open triples file '" + path + "'");
  return parse_triples(in);
}

inline void save_triples(const KnowledgeGraph& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  g.write_tsv(out);
}

}  // namespace uhop

template <typename Tag>
struct std::hash<uhop::DenseId<Tag>> {
  std::size_t operator()(const uhop::DenseId<Tag>& id) const noexcept { return id.value; }
};
