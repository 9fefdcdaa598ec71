#pragma once

// Trainable question/relation-path scorer with analytic gradients.
//
// A question is a sequence of token vectors (word embeddings, optionally bound
// to their position by a fixed random sign pattern). A relation path is the
// mean over its relations of 0.5 * (relation embedding + mean word embedding
// of the label tokens), bound to the relation's position in the path the same
// way. Two scoring variants share that encoding:
//
//   meanpool:  cos(mean of token vectors, path)
//   attentive: a = softmax(tokens * path / sqrt(d)),  cos(sum_i a_i t_i, path)
//
// The per-hop question update de-focuses what the accepted path explains:
//
//   attentive: t_i' = W (t_i - a_i * path) + B,     pooled' = mean t_i'
//   meanpool:  pooled' = W [pooled ; path] + B     (W is d x 2d)

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "uhop/datagen.hpp"
#include "uhop/error.hpp"
#include "uhop/kg_store.hpp"
#include "uhop/rng.hpp"

namespace uhop {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class ScorerVariant { meanpool, attentive };

inline const char* to_string(ScorerVariant v) { return v == ScorerVariant::meanpool ? "meanpool" : "attentive"; }

inline ScorerVariant parse_variant(std::string_view s) {
  if (s == "meanpool") return ScorerVariant::meanpool;
  if (s == "attentive") return ScorerVariant::attentive;
  throw ParseError("unknown scorer variant '" + std::string(s) + "'");
}

inline std::string normalize_token(std::string_view tok) {
  std::string out(tok);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

/// Word index; index 0 is `<unk>`. Frozen once built.
class Vocab {
 public:
  static constexpr int kUnk = 0;

  Vocab() { add("<unk>"); }

  /// `<unk>`, then relation label tokens by relation id, then question tokens
  /// in example order.
  static Vocab build(const KnowledgeGraph& g, std::span<const QaExample> questions) {
    Vocab v;
    for (std::uint32_t r = 0; r < g.num_relations(); ++r) {
      for (const auto& tok : g.relation_tokens(RelationId{r})) v.add(tok);
    }
    for (const auto& ex : questions) {
      for (const auto& tok : ex.question_tokens) v.add(normalize_token(tok));
    }
    return v;
  }

  int index(std::string_view token) const {
    auto it = index_.find(normalize_token(token));
    return it == index_.end() ? kUnk : it->second;
  }

  std::vector<int> ids(std::span<const std::string> tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(index(t));
    return out;
  }

  std::size_t size() const noexcept { return words_.size(); }
  const std::string& word(int i) const { return words_.at(static_cast<std::size_t>(i)); }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path + "'");
    for (std::size_t i = 0; i < words_.size(); ++i) out << words_[i] << '\t' << i << '\n';
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open vocabulary '" + path + "'");
    Vocab v;
    v.words_.clear();
    v.index_.clear();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto tab = line.rfind('\t');
      if (tab == std::string::npos) throw ParseError("vocabulary line without tab", lineno);
      std::size_t idx = std::stoul(line.substr(tab + 1));
      if (idx != v.words_.size()) throw ParseError("vocabulary indices must be contiguous", lineno);
      v.add(line.substr(0, tab));
    }
    if (v.words_.empty() || v.words_[0] != "<unk>") throw ParseError("vocabulary must start with <unk>");
    return v;
  }

 private:
  void add(const std::string& w) {
    if (index_.try_emplace(w, static_cast<int>(words_.size())).second) words_.push_back(w);
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

/// Word ids of each relation's label tokens, indexed by relation id.
struct RelationLexicon {
  std::vector<std::vector<int>> token_ids;

  static RelationLexicon build(const KnowledgeGraph& g, const Vocab& vocab) {
    RelationLexicon lex;
    for (std::uint32_t r = 0; r < g.num_relations(); ++r) lex.token_ids.push_back(vocab.ids(g.relation_tokens(RelationId{r})));
    return lex;
  }
};

struct ScorerConfig {
  ScorerVariant variant = ScorerVariant::attentive;
  int dim = 64;
  bool position_binding = false;
  int max_positions = 64;
  double init_range = 0.08;
  std::uint64_t seed = 0;
};

/// Trainable tensors. The same shape set holds values, gradients and
/// optimizer state.
struct Tensors {
  Matrix word_emb;  // |V| x d
  Matrix rel_emb;   // |R| x d
  Matrix proj_W;    // d x d (attentive) or d x 2d (meanpool)
  Vector proj_B;    // d

  Tensors zeros_like() const {
    Tensors t;
    t.word_emb = Matrix::Zero(word_emb.rows(), word_emb.cols());
    t.rel_emb = Matrix::Zero(rel_emb.rows(), rel_emb.cols());
    t.proj_W = Matrix::Zero(proj_W.rows(), proj_W.cols());
    t.proj_B = Vector::Zero(proj_B.size());
    return t;
  }

  void set_zero() {
    word_emb.setZero();
    rel_emb.setZero();
    proj_W.setZero();
    proj_B.setZero();
  }

  /// Visits matching (this, other...) tensors as flat arrays.
  template <typename F, typename... Others>
  void zip(F&& f, Others&... others) {
    f(flat(word_emb), flat(others.word_emb)...);
    f(flat(rel_emb), flat(others.rel_emb)...);
    f(flat(proj_W), flat(others.proj_W)...);
    f(flat(proj_B), flat(others.proj_B)...);
  }

  bool all_finite() const {
    return word_emb.allFinite() && rel_emb.allFinite() && proj_W.allFinite() && proj_B.allFinite();
  }

 private:
  template <typename M>
  static Eigen::Map<Vector> flat(M& m) {
    return Eigen::Map<Vector>(m.data(), m.size());
  }
};

struct ScorerParams {
  ScorerConfig config;
  Tensors value;
  Tensors grad;
  Matrix position_signs;  // max_positions x d, entries +-1; all ones when binding is off

  int dim() const noexcept { return config.dim; }
  ScorerVariant variant() const noexcept { return config.variant; }

  static ScorerParams init(const ScorerConfig& cfg, std::size_t vocab_size, std::size_t num_relations) {
    if (cfg.dim < 1) throw Error("scorer dim must be positive");
    if (cfg.max_positions < 1) throw Error("max_positions must be positive");
    ScorerParams p;
    p.config = cfg;
    const auto d = static_cast<Eigen::Index>(cfg.dim);
    Rng rng = Rng::stream(cfg.seed, "init");
    auto fill = [&](Matrix& m, Eigen::Index rows) {
      m.resize(rows, d);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-cfg.init_range, cfg.init_range);
    };
    fill(p.value.word_emb, static_cast<Eigen::Index>(vocab_size));
    fill(p.value.rel_emb, static_cast<Eigen::Index>(num_relations));
    if (cfg.variant == ScorerVariant::attentive) {
      p.value.proj_W = Matrix::Identity(d, d);
    } else {
      p.value.proj_W = Matrix::Zero(d, 2 * d);
      p.value.proj_W.leftCols(d).setIdentity();
    }
    p.value.proj_B = Vector::Zero(d);
    p.grad = p.value.zeros_like();
    p.position_signs = Matrix::Ones(cfg.max_positions, d);
    if (cfg.position_binding) {
      Rng srng = Rng::stream(cfg.seed, "positions");
      for (Eigen::Index i = 0; i < p.position_signs.size(); ++i)
        p.position_signs.data()[i] = (srng.next() >> 63) ? 1.0 : -1.0;
    }
    return p;
  }

  auto sign_row(std::size_t position) const {
    auto row = static_cast<Eigen::Index>(std::min<std::size_t>(position, static_cast<std::size_t>(config.max_positions - 1)));
    return position_signs.row(row).transpose();
  }
};

/// Encoded question. `attention` caches the weights of the last attentive
/// score() call, used by the attentive question update.
struct QuestionRepr {
  std::vector<int> word_ids;
  Matrix tokens;  // T x d
  Vector pooled;  // d
  std::optional<Vector> attention;
};

struct Score {
  double value = 0.0;
  bool zero_norm = false;
};

namespace detail {

constexpr double kNormFloor = 1e-12;

inline Score cosine(const Vector& u, const Vector& v) {
  const double nu = u.norm(), nv = v.norm();
  if (nu < kNormFloor || nv < kNormFloor) return {0.0, true};
  return {u.dot(v) / (nu * nv), false};
}

/// d cos(u, v) / du and / dv scaled by `upstream`, accumulated.
inline void cosine_backward(const Vector& u, const Vector& v, double upstream, Vector& du, Vector& dv) {
  const double nu = u.norm(), nv = v.norm();
  if (nu < kNormFloor || nv < kNormFloor) return;
  const double s = u.dot(v) / (nu * nv);
  du += upstream * (v / (nu * nv) - s * u / (nu * nu));
  dv += upstream * (u / (nu * nv) - s * v / (nv * nv));
}

inline Vector attention_weights(const Matrix& tokens, const Vector& p) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.size()));
  Vector z = tokens * p * scale;
  z.array() -= z.maxCoeff();
  Vector a = z.array().exp();
  return a / a.sum();
}

/// Backprop through a = softmax(tokens * p / sqrt(d)) given da.
inline void attention_backward(const Matrix& tokens, const Vector& p, const Vector& a, const Vector& da,
                               Matrix& dtokens, Vector& dp) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.size()));
  Vector dz = a.cwiseProduct((da.array() - a.dot(da)).matrix());
  dtokens.noalias() += dz * p.transpose() * scale;
  dp.noalias() += tokens.transpose() * dz * scale;
}

}  // namespace detail

/// token_vecs[i] = word_emb[id_i] (position-bound when configured); pooled = mean.
inline QuestionRepr encode_question(const ScorerParams& params, std::span<const int> word_ids) {
  if (word_ids.empty()) throw Error("cannot encode an empty question");
  QuestionRepr q;
  q.word_ids.assign(word_ids.begin(), word_ids.end());
  const auto T = static_cast<Eigen::Index>(word_ids.size());
  q.tokens.resize(T, params.dim());
  for (Eigen::Index i = 0; i < T; ++i) {
    auto id = static_cast<Eigen::Index>(word_ids[static_cast<std::size_t>(i)]);
    if (id < 0 || id >= params.value.word_emb.rows()) throw LookupError("word id out of range");
    q.tokens.row(i) = params.value.word_emb.row(id).cwiseProduct(params.sign_row(static_cast<std::size_t>(i)).transpose());
  }
  q.pooled = q.tokens.colwise().mean().transpose();
  return q;
}

inline QuestionRepr encode_question(const ScorerParams& params, const Vocab& vocab,
                                    std::span<const std::string> tokens) {
  auto ids = vocab.ids(tokens);
  return encode_question(params, ids);
}

/// Mean over path positions of the position-bound relation representation.
inline Vector encode_path(const ScorerParams& params, const RelationLexicon& lex, std::span<const RelationId> path) {
  if (path.empty()) throw Error("cannot encode an empty relation path");
  Vector out = Vector::Zero(params.dim());
  Vector rel(params.dim());
  for (std::size_t j = 0; j < path.size(); ++j) {
    const auto r = path[j].index();
    if (r >= lex.token_ids.size() || static_cast<Eigen::Index>(r) >= params.value.rel_emb.rows())
      throw LookupError("unknown relation id " + std::to_string(path[j].value));
    const auto& toks = lex.token_ids[r];
    rel.setZero();
    for (int w : toks) rel += params.value.word_emb.row(w).transpose();
    rel = 0.5 * params.value.rel_emb.row(static_cast<Eigen::Index>(r)).transpose() +
          (0.5 / static_cast<double>(toks.size())) * rel;
    out += rel.cwiseProduct(params.sign_row(j));
  }
  return out / static_cast<double>(path.size());
}

/// Scores q against an encoded path. The attentive variant caches its weights in q.
inline Score score(const ScorerParams& params, QuestionRepr& q, const Vector& p) {
  if (params.variant() == ScorerVariant::meanpool) return detail::cosine(q.pooled, p);
  Vector a = detail::attention_weights(q.tokens, p);
  Vector attended = q.tokens.transpose() * a;
  q.attention = std::move(a);
  return detail::cosine(attended, p);
}

/// Dynamic question representation. Attentive updates require the weights
/// cached by the preceding score() against the same path.
inline QuestionRepr update_question(const ScorerParams& params, const QuestionRepr& q, const Vector& p) {
  QuestionRepr out;
  out.word_ids = q.word_ids;
  const Matrix& W = params.value.proj_W;
  const Vector& B = params.value.proj_B;
  if (params.variant() == ScorerVariant::attentive) {
    if (!q.attention) throw Error("attentive question update needs attention weights from score()");
    const Vector& a = *q.attention;
    Matrix x = q.tokens - a * p.transpose();
    out.tokens = x * W.transpose();
    out.tokens.rowwise() += B.transpose();
    out.pooled = out.tokens.colwise().mean().transpose();
  } else {
    const auto d = params.dim();
    out.tokens = q.tokens;
    out.pooled = W.leftCols(d) * q.pooled + W.rightCols(d) * p + B;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backward pieces. Each accumulates into its output arguments.

struct QuestionGrad {
  Matrix tokens;
  Vector pooled;

  static QuestionGrad zeros(const QuestionRepr& q) {
    return {Matrix::Zero(q.tokens.rows(), q.tokens.cols()), Vector::Zero(q.pooled.size())};
  }
};

inline void score_backward(const ScorerParams& params, const QuestionRepr& q, const Vector& p, double ds,
                           QuestionGrad& dq, Vector& dp) {
  if (ds == 0.0) return;
  if (params.variant() == ScorerVariant::meanpool) {
    detail::cosine_backward(q.pooled, p, ds, dq.pooled, dp);
    return;
  }
  Vector a = detail::attention_weights(q.tokens, p);
  Vector attended = q.tokens.transpose() * a;
  Vector datt = Vector::Zero(attended.size());
  detail::cosine_backward(attended, p, ds, datt, dp);
  dq.tokens.noalias() += a * datt.transpose();
  Vector da = q.tokens * datt;
  detail::attention_backward(q.tokens, p, a, da, dq.tokens, dp);
}

/// Backprop through update_question(q_prev, p) given the gradient of its output.
inline void update_backward(const ScorerParams& params, const QuestionRepr& q_prev, const Vector& p,
                            const QuestionGrad& dq_next, QuestionGrad& dq_prev, Vector& dp, Tensors& grad) {
  const Matrix& W = params.value.proj_W;
  const auto d = params.dim();
  if (params.variant() == ScorerVariant::attentive) {
    const auto T = q_prev.tokens.rows();
    Matrix g = dq_next.tokens;
    g.rowwise() += (dq_next.pooled / static_cast<double>(T)).transpose();
    Vector a = detail::attention_weights(q_prev.tokens, p);
    Matrix x = q_prev.tokens - a * p.transpose();
    grad.proj_W.noalias() += g.transpose() * x;
    grad.proj_B += g.colwise().sum().transpose();
    Matrix u = g * W;  // rows: W^T g_i
    dq_prev.tokens += u;
    Vector da = -(u * p);
    dp.noalias() -= u.transpose() * a;
    detail::attention_backward(q_prev.tokens, p, a, da, dq_prev.tokens, dp);
  } else {
    Vector in(2 * d);
    in << q_prev.pooled, p;
    grad.proj_W.noalias() += dq_next.pooled * in.transpose();
    grad.proj_B += dq_next.pooled;
    Vector v = W.transpose() * dq_next.pooled;
    dq_prev.pooled += v.head(d);
    dp += v.tail(d);
    dq_prev.tokens += dq_next.tokens;
  }
}

inline void encode_question_backward(const ScorerParams& params, const QuestionRepr& q0, const QuestionGrad& dq,
                                     Tensors& grad) {
  const auto T = static_cast<Eigen::Index>(q0.word_ids.size());
  for (Eigen::Index i = 0; i < T; ++i) {
    Vector g = dq.tokens.row(i).transpose() + dq.pooled / static_cast<double>(T);
    grad.word_emb.row(q0.word_ids[static_cast<std::size_t>(i)]) +=
        g.cwiseProduct(params.sign_row(static_cast<std::size_t>(i))).transpose();
  }
}

inline void encode_path_backward(const ScorerParams& params, const RelationLexicon& lex,
                                 std::span<const RelationId> path, const Vector& dp, Tensors& grad) {
  const double inv_len = 1.0 / static_cast<double>(path.size());
  for (std::size_t j = 0; j < path.size(); ++j) {
    Vector g = dp.cwiseProduct(params.sign_row(j)) * inv_len;
    const auto r = path[j].index();
    grad.rel_emb.row(static_cast<Eigen::Index>(r)) += 0.5 * g.transpose();
    const auto& toks = lex.token_ids[r];
    const double w = 0.5 / static_cast<double>(toks.size());
    for (int t : toks) grad.word_emb.row(t) += w * g.transpose();
  }
}

// ---------------------------------------------------------------------------
// Scorer facade used by the search engine.

/// Binds frozen params to a vocabulary and relation lexicon.
class NeuralScorer {
 public:
  using Question = QuestionRepr;

  NeuralScorer(const ScorerParams& params, const Vocab& vocab, const RelationLexicon& lex)
      : params_(&params), vocab_(&vocab), lex_(&lex) {}

  Question encode(std::span<const std::string> tokens) const { return encode_question(*params_, *vocab_, tokens); }

  double score(Question& q, std::span<const RelationId> path) const {
    return uhop::score(*params_, q, encode_path(*params_, *lex_, path)).value;
  }

  /// Re-scores the accepted path to refresh the attention cache, then updates.
  void update(Question& q, std::span<const RelationId> path) const {
    Vector p = encode_path(*params_, *lex_, path);
    if (params_->variant() == ScorerVariant::attentive) uhop::score(*params_, q, p);
    q = update_question(*params_, q, p);
  }

  const ScorerParams& params() const noexcept { return *params_; }

 private:
  const ScorerParams* params_;
  const Vocab* vocab_;
  const RelationLexicon* lex_;
};

// ---------------------------------------------------------------------------
// Checkpoints: text header, then named tensors as `tensor <name> <rows> <cols>`
// followed by row-major decimal values.

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void write_tensor(std::ostream& out, const char* name, const Matrix& m) {
  out << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << m(i, j);
    out << '\n';
  }
}

inline Matrix read_tensor(std::istream& in, const char* name, Eigen::Index rows, Eigen::Index cols) {
  std::string tag, got;
  Eigen::Index r = 0, c = 0;
  if (!(in >> tag >> got >> r >> c) || tag != "tensor")
    throw ParseError(std::string("checkpoint: expected tensor ") + name);
  if (got != name) throw ParseError("checkpoint: expected tensor " + std::string(name) + ", found " + got);
  if (r != rows || c != cols)
    throw ValidationError("checkpoint: tensor " + got + " has dims " + std::to_string(r) + "x" + std::to_string(c) +
                          ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (!(in >> m.data()[i])) throw ParseError("checkpoint: truncated tensor " + got);
  }
  return m;
}

}  // namespace detail

inline void save_checkpoint(const ScorerParams& params, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << std::setprecision(17);
  const auto& c = params.config;
  out << "uhop-checkpoint " << kCheckpointVersion << '\n'
      << "variant " << to_string(c.variant) << '\n'
      << "dim " << c.dim << '\n'
      << "vocab " << params.value.word_emb.rows() << '\n'
      << "relations " << params.value.rel_emb.rows() << '\n'
      << "position_binding " << (c.position_binding ? 1 : 0) << '\n'
      << "max_positions " << c.max_positions << '\n';
  detail::write_tensor(out, "word_emb", params.value.word_emb);
  detail::write_tensor(out, "rel_emb", params.value.rel_emb);
  detail::write_tensor(out, "proj_W", params.value.proj_W);
  detail::write_tensor(out, "proj_B", params.value.proj_B.transpose());
  if (c.position_binding) detail::write_tensor(out, "position_signs", params.position_signs);
}

inline ScorerParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open checkpoint '" + path + "'");
  auto expect = [&](const char* key) {
    std::string k, v;
    if (!(in >> k >> v) || k != key) throw ParseError(std::string("checkpoint: expected header key ") + key);
    return v;
  };
  if (std::stoi(expect("uhop-checkpoint")) != kCheckpointVersion) throw ParseError("checkpoint: unsupported version");
  ScorerConfig cfg;
  cfg.variant = parse_variant(expect("variant"));
  cfg.dim = std::stoi(expect("dim"));
  const auto vocab = std::stol(expect("vocab"));
  const auto rels = std::stol(expect("relations"));
  cfg.position_binding = std::stoi(expect("position_binding")) != 0;
  cfg.max_positions = std::stoi(expect("max_positions"));
  ScorerParams p = ScorerParams::init(cfg, static_cast<std::size_t>(vocab), static_cast<std::size_t>(rels));
  const Eigen::Index d = cfg.dim;
  p.value.word_emb = detail::read_tensor(in, "word_emb", vocab, d);
  p.value.rel_emb = detail::read_tensor(in, "rel_emb", rels, d);
  p.value.proj_W = detail::read_tensor(in, "proj_W", d, cfg.variant == ScorerVariant::attentive ? d : 2 * d);
  p.value.proj_B = detail::read_tensor(in, "proj_B", 1, d).transpose();
  if (cfg.position_binding) p.position_signs = detail::read_tensor(in, "position_signs", cfg.max_positions, d);
  if (!p.value.all_finite()) throw ValidationError("checkpoint: non-finite parameter values");
  p.grad = p.value.zeros_like();
  return p;
}

}  // namespace uhop
