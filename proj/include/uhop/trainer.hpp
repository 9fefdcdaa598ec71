#pragma once

// Joint training of next-relation extraction and the stop decision with
// pairwise hinge losses, teacher-forced along gold paths.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <iostream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uhop/datagen.hpp"
#include "uhop/engine.hpp"
#include "uhop/error.hpp"
#include "uhop/kg_store.hpp"
#include "uhop/rng.hpp"
#include "uhop/scorer.hpp"

namespace uhop {

/// Mean over negatives of max(0, M - (gold - neg)); 0 with no negatives.
inline double loss_re(double s_gold, std::span<const double> s_negs, double margin) {
  if (s_negs.empty()) return 0.0;
  double sum = 0.0;
  for (double s : s_negs) sum += std::max(0.0, -(s_gold - s) + margin);
  return sum / static_cast<double>(s_negs.size());
}

/// The next gold relation must beat the current path by the margin.
inline double loss_td_continue(double s_next_gold, double s_current, double margin) {
  return std::max(0.0, -(s_next_gold - s_current) + margin);
}

/// The finished path must beat every one-relation extension by the margin.
inline double loss_td_stop(double s_path, std::span<const double> s_extensions, double margin) {
  return loss_re(s_path, s_extensions, margin);
}

enum class OptimizerKind { rmsprop, sgd };

struct TrainConfig {
  double margin = 0.5;
  double learning_rate = 0.001;
  OptimizerKind optimizer = OptimizerKind::rmsprop;
  double rho = 0.9;
  double epsilon = 1e-8;
  int epochs = 30;
  int batch_size = 32;
  int patience = 5;
  std::uint64_t seed = 0;
  bool use_dynamic_question = false;
  int hop_cap = 16;
  /// 0 trains the hop-by-hop objective; L > 0 trains a relation-chain
  /// baseline over all paths up to length L.
  int chain_max_hops = 0;
  std::size_t chain_budget = 1'000'000;

  void validate() const {
    if (!(margin > 0.0 && margin <= 1.0)) throw Error("margin must be in (0, 1]");
    if (!(learning_rate > 0.0)) throw Error("learning_rate must be positive");
    if (epochs < 0) throw Error("epochs must be >= 0");
    if (batch_size < 1) throw Error("batch_size must be >= 1");
    if (patience < 1) throw Error("patience must be >= 1");
  }

  EngineConfig engine() const { return {hop_cap, use_dynamic_question}; }
};

struct HopLosses {
  std::vector<double> re;
  std::vector<double> td;

  double total() const {
    return std::accumulate(re.begin(), re.end(), 0.0) + std::accumulate(td.begin(), td.end(), 0.0);
  }
  double total_re() const { return std::accumulate(re.begin(), re.end(), 0.0); }
  double total_td() const { return std::accumulate(td.begin(), td.end(), 0.0); }
};

/// Forward record of one example's loss: the question state per hop, the
/// paths used for question updates, and every scored (question, path) pair
/// with its loss gradient. backward() replays it in reverse.
class LossTape {
 public:
  struct Node {
    std::size_t question;
    RelationPath path;
    Vector encoded;
    double value;
    double grad = 0.0;
  };

  void reset() {
    questions_.clear();
    update_paths_.clear();
    nodes_.clear();
    complete_ = false;
  }

  void start(QuestionRepr q0) {
    reset();
    questions_.push_back(std::move(q0));
  }

  std::size_t current_question() const { return questions_.size() - 1; }

  std::size_t add_score(const ScorerParams& params, const RelationLexicon& lex, RelationPath path) {
    Vector p = encode_path(params, lex, path);
    double v = score(params, questions_.back(), p).value;
    nodes_.push_back({current_question(), std::move(path), std::move(p), v});
    return nodes_.size() - 1;
  }

  double value(std::size_t node) const { return nodes_[node].value; }

  void update_question(const ScorerParams& params, const RelationLexicon& lex, RelationPath path) {
    Vector p = encode_path(params, lex, path);
    QuestionRepr& q = questions_.back();
    if (params.variant() == ScorerVariant::attentive) score(params, q, p);
    QuestionRepr next = uhop::update_question(params, q, p);
    update_paths_.push_back({current_question(), std::move(path), std::move(p), 0.0});
    questions_.push_back(std::move(next));
  }

  /// Hinge mean over negatives, recording d loss / d score on each node.
  double hinge(std::size_t gold, std::span<const std::size_t> negs, double margin) {
    if (negs.empty()) return 0.0;
    const double w = 1.0 / static_cast<double>(negs.size());
    double sum = 0.0;
    for (std::size_t n : negs) {
      double h = -(nodes_[gold].value - nodes_[n].value) + margin;
      if (std::isnan(h)) return h;
      if (h > 0.0) {
        sum += h;
        nodes_[gold].grad -= w;
        nodes_[n].grad += w;
      }
    }
    return sum * w;
  }

  void mark_complete() { complete_ = true; }
  bool complete() const { return complete_; }

  /// Accumulates d loss / d params into `grad`.
  void backward(const ScorerParams& params, const RelationLexicon& lex, Tensors& grad) const {
    if (!complete_) throw Error("backward() called without a completed forward pass");
    std::vector<QuestionGrad> dq;
    dq.reserve(questions_.size());
    for (const auto& q : questions_) dq.push_back(QuestionGrad::zeros(q));
    Vector dp(params.dim());
    for (const Node& n : nodes_) {
      if (n.grad == 0.0) continue;
      dp.setZero();
      score_backward(params, questions_[n.question], n.encoded, n.grad, dq[n.question], dp);
      encode_path_backward(params, lex, n.path, dp, grad);
    }
    for (std::size_t h = questions_.size() - 1; h > 0; --h) {
      const Node& u = update_paths_[h - 1];
      dp.setZero();
      update_backward(params, questions_[h - 1], u.encoded, dq[h], dq[h - 1], dp, grad);
      encode_path_backward(params, lex, u.path, dp, grad);
    }
    encode_question_backward(params, questions_.front(), dq.front(), grad);
  }

 private:
  std::vector<QuestionRepr> questions_;
  std::vector<Node> update_paths_;
  std::vector<Node> nodes_;
  bool complete_ = false;
};

/// Everything the loss needs besides the parameters.
struct TrainContext {
  const KnowledgeGraph* graph;
  const Vocab* vocab;
  const RelationLexicon* lexicon;
};

/// Teacher-forced per-hop losses of one example, recorded on `tape`.
/// Hop i scores gold_prefix:r for every outbound r of the gold frontier
/// (extraction), then compares the gold prefix with the next gold step
/// (continue) or with every extension of the final frontier (stop).
inline HopLosses example_loss(const ScorerParams& params, const TrainContext& ctx, const QaExample& ex,
                              const TrainConfig& cfg, LossTape& tape) {
  const KnowledgeGraph& g = *ctx.graph;
  const RelationPath gold = path_from_labels(g, ex.path);
  const std::size_t H = gold.size();
  if (H == 0) throw ValidationError("empty gold path");
  tape.start(encode_question(params, *ctx.vocab, ex.question_tokens));
  HopLosses losses;
  std::vector<EntityId> frontier{g.entity(ex.topic)};
  RelationPath prefix;
  std::vector<std::size_t> negs;
  for (std::size_t i = 0; i < H; ++i) {
    auto rels = frontier_relations(g, frontier);
    if (!std::binary_search(rels.begin(), rels.end(), gold[i]))
      throw ValidationError("gold relation '" + g.relation_label(gold[i]) + "' not available at hop " +
                            std::to_string(i + 1));
    RelationPath next_prefix = prefix.concat(gold[i]);
    std::size_t gold_node = tape.add_score(params, *ctx.lexicon, next_prefix);
    negs.clear();
    for (RelationId r : rels) {
      if (r != gold[i]) negs.push_back(tape.add_score(params, *ctx.lexicon, prefix.concat(r)));
    }
    losses.re.push_back(tape.hinge(gold_node, negs, cfg.margin));

    frontier = transit_frontier(g, frontier, gold[i]);
    prefix = std::move(next_prefix);
    if (i + 1 < H) {
      std::size_t next_node = tape.add_score(params, *ctx.lexicon, prefix.concat(gold[i + 1]));
      std::size_t one[] = {gold_node};
      losses.td.push_back(tape.hinge(next_node, one, cfg.margin));
      if (cfg.use_dynamic_question) tape.update_question(params, *ctx.lexicon, prefix);
    } else {
      negs.clear();
      for (RelationId r : frontier_relations(g, frontier)) negs.push_back(tape.add_score(params, *ctx.lexicon, prefix.concat(r)));
      losses.td.push_back(tape.hinge(gold_node, negs, cfg.margin));
    }
  }
  tape.mark_complete();
  return losses;
}

/// Relation-chain objective: the gold path against every other path of length
/// 1..L from the topic. Reported as a single RE term.
inline HopLosses chain_example_loss(const ScorerParams& params, const TrainContext& ctx, const QaExample& ex,
                                    const TrainConfig& cfg, LossTape& tape) {
  const KnowledgeGraph& g = *ctx.graph;
  const RelationPath gold = path_from_labels(g, ex.path);
  tape.start(encode_question(params, *ctx.vocab, ex.question_tokens));
  auto paths = enumerate_paths(g, g.entity(ex.topic), cfg.chain_max_hops, cfg.chain_budget);
  std::optional<std::size_t> gold_node;
  std::vector<std::size_t> negs;
  for (auto& p : paths) {
    bool is_gold = p == gold;
    std::size_t n = tape.add_score(params, *ctx.lexicon, std::move(p));
    if (is_gold) {
      gold_node = n;
    } else {
      negs.push_back(n);
    }
  }
  if (!gold_node) throw ValidationError("gold path longer than the chain baseline's maximum length");
  HopLosses losses;
  losses.re.push_back(tape.hinge(*gold_node, negs, cfg.margin));
  tape.mark_complete();
  return losses;
}

/// Forward + backward for one example; gradients accumulate into params.grad.
inline HopLosses train_example(ScorerParams& params, const TrainContext& ctx, const QaExample& ex,
                               const TrainConfig& cfg, LossTape& tape) {
  HopLosses l = cfg.chain_max_hops > 0 ? chain_example_loss(params, ctx, ex, cfg, tape)
                                       : example_loss(params, ctx, ex, cfg, tape);
  tape.backward(params, *ctx.lexicon, params.grad);
  return l;
}

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const Tensors& shape) : cfg_(cfg), cache_(shape.zeros_like()) {}

  void step(ScorerParams& params) {
    const double lr = cfg_.learning_rate;
    if (cfg_.optimizer == OptimizerKind::sgd) {
      params.value.zip([&](auto v, auto g) { v -= lr * g; }, params.grad);
      return;
    }
    const double rho = cfg_.rho, eps = cfg_.epsilon;
    params.value.zip(
        [&](auto v, auto g, auto c) {
          c = rho * c + (1.0 - rho) * g.cwiseProduct(g);
          v.array() -= lr * g.array() / (c.array().sqrt() + eps);
        },
        params.grad, cache_);
  }

 private:
  TrainConfig cfg_;
  Tensors cache_;
};

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double mean_loss_re = 0.0;
  double mean_loss_td = 0.0;
  double valid_path_acc = 0.0;
  double seconds = 0.0;
};

struct FitResult {
  ScorerParams best;
  int best_epoch = 0;
  double best_valid_acc = 0.0;
  std::vector<EpochLog> log;
};

/// Exact-match path accuracy of the hop-by-hop search (or of the chain
/// baseline when cfg.chain_max_hops > 0).
inline double path_accuracy(const ScorerParams& params, const TrainContext& ctx, std::span<const QaExample> data,
                            const TrainConfig& cfg) {
  if (data.empty()) return 0.0;
  NeuralScorer scorer(params, *ctx.vocab, *ctx.lexicon);
  std::size_t correct = 0;
  for (const auto& ex : data) {
    RelationPath gold = path_from_labels(*ctx.graph, ex.path);
    EntityId topic = ctx.graph->entity(ex.topic);
    RelationPath pred = cfg.chain_max_hops > 0
                            ? run_chain_baseline(scorer, ex.question_tokens, topic, *ctx.graph, cfg.chain_max_hops,
                                                 cfg.chain_budget)
                                  .path
                            : run_uhop(scorer, ex.question_tokens, topic, *ctx.graph, cfg.engine()).path;
    if (pred == gold) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

using EpochCallback = std::function<void(const EpochLog&)>;

/// Epoch loop with seeded shuffling, mini-batch averaging, per-epoch
/// validation accuracy, best-checkpoint retention and early stopping.
inline FitResult fit(const ScorerParams& initial, const TrainContext& ctx, std::span<const QaExample> train,
                     std::span<const QaExample> valid, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  FitResult result{initial, 0, 0.0, {}};
  if (cfg.epochs == 0) return result;
  if (train.empty()) throw TrainingError("training set is empty");

  ScorerParams params = initial;
  params.grad.set_zero();
  Optimizer opt(cfg, params.value);
  LossTape tape;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  int since_best = 0;
  bool have_best = false;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    Rng rng = Rng::stream(cfg.seed, "epoch/" + std::to_string(epoch));
    rng.shuffle(order);
    EpochLog log;
    log.epoch = epoch;
    std::size_t used = 0, in_batch = 0;
    auto flush = [&] {
      if (in_batch == 0) return;
      const double scale = 1.0 / static_cast<double>(in_batch);
      params.grad.zip([&](auto g) { g *= scale; });
      opt.step(params);
      params.grad.set_zero();
      in_batch = 0;
    };
    for (std::size_t idx : order) {
      HopLosses l;
      try {
        l = train_example(params, ctx, train[idx], cfg, tape);
      } catch (const ValidationError& e) {
        std::cerr << "warning: skipping training example " << idx << ": " << e.what() << '\n';
        continue;
      }
      const double total = l.total();
      if (!std::isfinite(total))
        throw TrainingError("non-finite loss on training example " + std::to_string(idx) + " in epoch " +
                            std::to_string(epoch));
      log.mean_loss += total;
      log.mean_loss_re += l.total_re();
      log.mean_loss_td += l.total_td();
      ++used;
      if (++in_batch == static_cast<std::size_t>(cfg.batch_size)) flush();
    }
    flush();
    if (!params.value.all_finite()) throw TrainingError("parameters became non-finite in epoch " + std::to_string(epoch));
    if (used > 0) {
      log.mean_loss /= static_cast<double>(used);
      log.mean_loss_re /= static_cast<double>(used);
      log.mean_loss_td /= static_cast<double>(used);
    }
    log.valid_path_acc = path_accuracy(params, ctx, valid, cfg);
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);

    if (!have_best || log.valid_path_acc > result.best_valid_acc) {
      have_best = true;
      result.best = params;
      result.best_epoch = epoch;
      result.best_valid_acc = log.valid_path_acc;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  result.best.grad.set_zero();
  return result;
}

inline void write_training_log(const std::vector<EpochLog>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "epoch,mean_loss,mean_loss_re,mean_loss_td,valid_path_acc,seconds\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& e : log)
    out << e.epoch << ',' << e.mean_loss << ',' << e.mean_loss_re << ',' << e.mean_loss_td << ',' << e.valid_path_acc
        << ',' << e.seconds << '\n';
}

}  // namespace uhop
