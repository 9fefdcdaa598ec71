#pragma once

// Shared fixtures and a loop-based reference model used as an independent
// oracle for the vectorized scorer and the per-example loss.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "uhop/uhop.hpp"

namespace testutil {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline uhop::KnowledgeGraph graph_from(const std::string& tsv) {
  std::istringstream in(tsv);
  return uhop::parse_triples(in);
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class TempDir {
 public:
  explicit TempDir(const std::string& name) {
    path_ = std::filesystem::temp_directory_path() / ("uhop_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// Reference model: plain loops over std::vector, no Eigen expressions.

inline double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline double cosine(const Vec& a, const Vec& b) {
  double na = norm(a), nb = norm(b);
  if (na < 1e-12 || nb < 1e-12) return 0.0;
  return dot(a, b) / (na * nb);
}

inline double sign(const uhop::ScorerParams& p, std::size_t pos, int k) {
  std::size_t row = std::min<std::size_t>(pos, static_cast<std::size_t>(p.config.max_positions - 1));
  return p.position_signs(static_cast<long>(row), k);
}

inline Vec word_row(const uhop::ScorerParams& p, int w) {
  Vec v(static_cast<std::size_t>(p.dim()));
  for (int k = 0; k < p.dim(); ++k) v[static_cast<std::size_t>(k)] = p.value.word_emb(w, k);
  return v;
}

struct RefQuestion {
  Mat tokens;
  Vec pooled;
};

inline RefQuestion ref_question(const uhop::ScorerParams& p, const std::vector<int>& ids) {
  RefQuestion q;
  const int d = p.dim();
  q.pooled.assign(static_cast<std::size_t>(d), 0.0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Vec t(static_cast<std::size_t>(d));
    for (int k = 0; k < d; ++k) t[static_cast<std::size_t>(k)] = p.value.word_emb(ids[i], k) * sign(p, i, k);
    for (int k = 0; k < d; ++k) q.pooled[static_cast<std::size_t>(k)] += t[static_cast<std::size_t>(k)] / static_cast<double>(ids.size());
    q.tokens.push_back(t);
  }
  return q;
}

inline Vec ref_path(const uhop::ScorerParams& p, const uhop::RelationLexicon& lex,
                    const std::vector<uhop::RelationId>& path) {
  const int d = p.dim();
  Vec out(static_cast<std::size_t>(d), 0.0);
  for (std::size_t j = 0; j < path.size(); ++j) {
    const auto r = static_cast<long>(path[j].value);
    const auto& toks = lex.token_ids[path[j].index()];
    for (int k = 0; k < d; ++k) {
      double words = 0;
      for (int w : toks) words += p.value.word_emb(w, k);
      words /= static_cast<double>(toks.size());
      double rel = 0.5 * p.value.rel_emb(r, k) + 0.5 * words;
      out[static_cast<std::size_t>(k)] += rel * sign(p, j, k) / static_cast<double>(path.size());
    }
  }
  return out;
}

inline Vec ref_attention(const Mat& tokens, const Vec& p) {
  Vec z;
  for (const auto& t : tokens) z.push_back(dot(t, p) / std::sqrt(static_cast<double>(p.size())));
  double m = *std::max_element(z.begin(), z.end());
  double s = 0;
  for (double& v : z) {
    v = std::exp(v - m);
    s += v;
  }
  for (double& v : z) v /= s;
  return z;
}

inline double ref_score(const uhop::ScorerParams& params, const RefQuestion& q, const Vec& p) {
  if (params.variant() == uhop::ScorerVariant::meanpool) return cosine(q.pooled, p);
  Vec a = ref_attention(q.tokens, p);
  Vec att(p.size(), 0.0);
  for (std::size_t i = 0; i < q.tokens.size(); ++i)
    for (std::size_t k = 0; k < p.size(); ++k) att[k] += a[i] * q.tokens[i][k];
  return cosine(att, p);
}

inline RefQuestion ref_update(const uhop::ScorerParams& params, const RefQuestion& q, const Vec& p) {
  const std::size_t d = p.size();
  const auto& W = params.value.proj_W;
  const auto& B = params.value.proj_B;
  RefQuestion out;
  if (params.variant() == uhop::ScorerVariant::attentive) {
    Vec a = ref_attention(q.tokens, p);
    out.pooled.assign(d, 0.0);
    for (std::size_t i = 0; i < q.tokens.size(); ++i) {
      Vec x(d), y(d);
      for (std::size_t k = 0; k < d; ++k) x[k] = q.tokens[i][k] - a[i] * p[k];
      for (std::size_t r = 0; r < d; ++r) {
        y[r] = B(static_cast<long>(r));
        for (std::size_t c = 0; c < d; ++c) y[r] += W(static_cast<long>(r), static_cast<long>(c)) * x[c];
        out.pooled[r] += y[r] / static_cast<double>(q.tokens.size());
      }
      out.tokens.push_back(y);
    }
  } else {
    out.tokens = q.tokens;
    out.pooled.assign(d, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
      double v = B(static_cast<long>(r));
      for (std::size_t c = 0; c < d; ++c) v += W(static_cast<long>(r), static_cast<long>(c)) * q.pooled[c];
      for (std::size_t c = 0; c < d; ++c) v += W(static_cast<long>(r), static_cast<long>(d + c)) * p[c];
      out.pooled[r] = v;
    }
  }
  return out;
}

/// Outbound relations of a set of entities, read straight from the triples.
inline std::vector<uhop::RelationId> ref_relations(const uhop::KnowledgeGraph& g,
                                                   const std::set<uhop::EntityId>& frontier) {
  std::set<uhop::RelationId> rels;
  for (const auto& t : g.triples())
    if (frontier.count(t.head)) rels.insert(t.relation);
  return {rels.begin(), rels.end()};
}

inline std::set<uhop::EntityId> ref_step(const uhop::KnowledgeGraph& g, const std::set<uhop::EntityId>& frontier,
                                         uhop::RelationId r) {
  std::set<uhop::EntityId> out;
  for (const auto& t : g.triples())
    if (frontier.count(t.head) && t.relation == r) out.insert(t.tail);
  return out;
}

inline double hinge_mean(double gold, const Vec& negs, double m) {
  if (negs.empty()) return 0.0;
  double s = 0;
  for (double n : negs) s += std::max(0.0, m - gold + n);
  return s / static_cast<double>(negs.size());
}

/// Total teacher-forced loss recomputed from scratch.
inline double ref_example_loss(const uhop::ScorerParams& params, const uhop::KnowledgeGraph& g,
                               const uhop::Vocab& vocab, const uhop::RelationLexicon& lex, const uhop::QaExample& ex,
                               double margin, bool dynamic_question) {
  RefQuestion q = ref_question(params, vocab.ids(ex.question_tokens));
  std::vector<uhop::RelationId> gold;
  for (const auto& l : ex.path) gold.push_back(g.relation(l));
  std::set<uhop::EntityId> frontier{g.entity(ex.topic)};
  std::vector<uhop::RelationId> prefix;
  double total = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    auto with = [&](uhop::RelationId r) {
      auto p = prefix;
      p.push_back(r);
      return p;
    };
    double s_gold = ref_score(params, q, ref_path(params, lex, with(gold[i])));
    Vec negs;
    for (auto r : ref_relations(g, frontier))
      if (r != gold[i]) negs.push_back(ref_score(params, q, ref_path(params, lex, with(r))));
    total += hinge_mean(s_gold, negs, margin);
    frontier = ref_step(g, frontier, gold[i]);
    prefix.push_back(gold[i]);
    if (i + 1 < gold.size()) {
      double s_next = ref_score(params, q, ref_path(params, lex, with(gold[i + 1])));
      total += std::max(0.0, margin - s_next + s_gold);
      if (dynamic_question) q = ref_update(params, q, ref_path(params, lex, prefix));
    } else {
      Vec ext;
      for (auto r : ref_relations(g, frontier)) ext.push_back(ref_score(params, q, ref_path(params, lex, with(r))));
      total += hinge_mean(s_gold, ext, margin);
    }
  }
  return total;
}

/// Small random instance for gradient checks: a random graph with a few
/// relations, a question with filler words and a gold path of 1..3 hops.
struct SmallInstance {
  uhop::KnowledgeGraph graph;
  uhop::QaExample example;
};

inline SmallInstance random_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int n_ent = 6, n_rel = 4;
  const char* rel_names[] = {"loc.city", "loc.country", "person.born_in", "film.director"};
  std::ostringstream tsv;
  for (int e = 0; e < n_ent; ++e) {
    for (int r = 0; r < n_rel; ++r) {
      if (rng() % 3 == 0) continue;
      int t = static_cast<int>(rng() % n_ent);
      tsv << "e" << e << '\t' << rel_names[r] << '\t' << "e" << t << '\n';
      if (rng() % 4 == 0) tsv << "e" << e << '\t' << rel_names[r] << '\t' << "e" << (t + 1) % n_ent << '\n';
    }
  }
  SmallInstance inst{graph_from(tsv.str()), {}};
  const auto& g = inst.graph;
  const std::vector<std::string> filler = {"what", "is", "the", "city", "of", "born", "country", "who"};
  for (int attempt = 0;; ++attempt) {
    uhop::EntityId topic{static_cast<std::uint32_t>(rng() % g.num_entities())};
    if (g.outbound(topic).empty()) continue;
    int hops = 1 + static_cast<int>(rng() % 3);
    std::vector<uhop::EntityId> frontier{topic};
    std::vector<std::string> path;
    for (int h = 0; h < hops; ++h) {
      auto rels = uhop::frontier_relations(g, frontier);
      if (rels.empty()) break;
      auto r = rels[rng() % rels.size()];
      path.push_back(g.relation_label(r));
      frontier = uhop::transit_frontier(g, frontier, r);
    }
    if (path.empty()) continue;
    inst.example.topic = g.entity_label(topic);
    inst.example.path = path;
    inst.example.answer = g.entity_label(frontier.front());
    int len = 2 + static_cast<int>(rng() % 4);
    for (int i = 0; i < len; ++i) inst.example.question_tokens.push_back(filler[rng() % filler.size()]);
    return inst;
  }
}

struct FdStats {
  std::size_t checked = 0;
  std::size_t agreed = 0;
  double agreement() const { return checked ? static_cast<double>(agreed) / static_cast<double>(checked) : 0.0; }
};

/// Central differences on the full per-example loss against the analytic
/// gradient, every coordinate, over `n` random instances (both variants,
/// with and without position binding and the question update).
inline FdStats finite_difference_check(std::uint64_t n) {
  FdStats stats;
  for (std::uint64_t seed = 0; seed < n; ++seed) {
    auto inst = random_instance(seed);
    std::vector<uhop::QaExample> qs{inst.example};
    uhop::Vocab vocab = uhop::Vocab::build(inst.graph, qs);
    uhop::RelationLexicon lex = uhop::RelationLexicon::build(inst.graph, vocab);
    uhop::ScorerConfig sc;
    sc.variant = seed % 2 ? uhop::ScorerVariant::meanpool : uhop::ScorerVariant::attentive;
    sc.dim = 5;
    sc.position_binding = seed % 3 == 0;
    sc.max_positions = 6;
    sc.init_range = 0.5;
    sc.seed = seed;
    uhop::ScorerParams params = uhop::ScorerParams::init(sc, vocab.size(), inst.graph.num_relations());
    std::mt19937_64 rng(seed + 100);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (Eigen::Index i = 0; i < params.value.proj_W.size(); ++i) params.value.proj_W.data()[i] += u(rng);
    for (Eigen::Index i = 0; i < params.value.proj_B.size(); ++i) params.value.proj_B(i) = u(rng);
    uhop::TrainContext ctx{&inst.graph, &vocab, &lex};
    uhop::TrainConfig cfg;
    cfg.margin = 1.0;
    cfg.use_dynamic_question = seed % 4 < 2;

    uhop::LossTape tape;
    params.grad.set_zero();
    uhop::train_example(params, ctx, inst.example, cfg, tape);
    uhop::Tensors analytic = params.grad;
    auto loss_at = [&](uhop::ScorerParams& p) {
      uhop::LossTape t;
      return uhop::example_loss(p, ctx, inst.example, cfg, t).total();
    };
    constexpr double eps = 1e-4;
    std::vector<std::pair<double*, double*>> coords;
    params.value.zip(
        [&](auto v, auto g) {
          for (Eigen::Index i = 0; i < v.size(); ++i) coords.emplace_back(&v(i), &g(i));
        },
        analytic);
    for (auto [v, g] : coords) {
      const double saved = *v;
      *v = saved + eps;
      const double up = loss_at(params);
      *v = saved - eps;
      const double down = loss_at(params);
      *v = saved;
      const double numeric = (up - down) / (2 * eps);
      const double diff = std::abs(numeric - *g);
      const double scale = std::max(std::abs(numeric), std::abs(*g));
      ++stats.checked;
      if (diff <= 1e-3 * scale || diff < 1e-8) ++stats.agreed;
    }
  }
  return stats;
}

}  // namespace testutil
