#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "uld/corpus.hpp"
#include "uld/error.hpp"
#include "uld/losses.hpp"
#include "uld/model.hpp"
#include "uld/ot.hpp"
#include "uld/tokenizer.hpp"

namespace uld {

enum class TrainMode { raw, uld, kl, uld_costed };

inline const char* to_string(TrainMode m) {
  switch (m) {
    case TrainMode::raw: return "raw";
    case TrainMode::uld: return "uld";
    case TrainMode::kl: return "kl";
    case TrainMode::uld_costed: return "uld_costed";
  }
  return "raw";
}

inline TrainMode parse_train_mode(std::string_view s) {
  if (s == "raw") return TrainMode::raw;
  if (s == "uld") return TrainMode::uld;
  if (s == "kl") return TrainMode::kl;
  if (s == "uld_costed") return TrainMode::uld_costed;
  throw ConfigError("unknown mode '" + std::string(s) + "' (expected raw, uld, kl or uld_costed)");
}

inline CostKind parse_cost_kind(std::string_view s) {
  if (s == "uniform01") return CostKind::uniform01;
  if (s == "levenshtein") return CostKind::levenshtein;
  if (s == "embedding_l2") return CostKind::embedding_l2;
  throw ConfigError("unknown cost kind '" + std::string(s) +
                    "' (expected uniform01, levenshtein or embedding_l2)");
}

struct TrainConfig {
  std::uint32_t seed = 0;
  double lambda = kDefaultLambda;
  double tau = kDefaultTau;
  std::size_t epochs = 5;
  std::size_t batch_size = 8;
  double lr_max = 3e-3;
  TrainMode mode = TrainMode::uld;
  double dataset_fraction = 1.0;
  CostKind cost_kind = CostKind::uniform01;
  /// Optimizer steps between metric records; 0 picks 200, scaled down
  /// proportionally for runs shorter than 2000 steps.
  std::size_t eval_interval = 0;
  /// `vocab_size` and `seed` are filled in from the tokenizer and `seed`.
  ModelConfig model{0, 128, 64, 4, 2, 0};

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ParameterError("lambda must be >= 0");
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ParameterError("tau must be positive");
    if (!(dataset_fraction > 0.0 && dataset_fraction <= 1.0)) {
      throw ParameterError("dataset_fraction must lie in (0, 1]");
    }
    if (epochs == 0) throw ParameterError("epochs must be positive");
    if (batch_size == 0) throw ParameterError("batch_size must be positive");
    if (!(lr_max > 0.0)) throw ParameterError("lr_max must be positive");
  }
};

/// Linear warmup over the first 30% of steps from lr_max/2 to lr_max, then
/// cosine decay to lr_max/10.
struct OneCycle {
  double lr_max = 3e-3;
  std::size_t total_steps = 1;

  [[nodiscard]] double initial() const { return lr_max / 2.0; }
  [[nodiscard]] double minimum() const { return initial() / 5.0; }
  [[nodiscard]] std::size_t warmup() const {
    return static_cast<std::size_t>(std::ceil(0.3 * static_cast<double>(total_steps)));
  }

  /// Learning rate for optimizer step `s` (0-based).
  [[nodiscard]] double at(std::size_t s) const {
    const std::size_t w = warmup();
    if (s < w) {
      return initial() + (lr_max - initial()) * static_cast<double>(s) / static_cast<double>(w);
    }
    const std::size_t span = total_steps > w ? total_steps - w : 1;
    const double frac = std::min(1.0, static_cast<double>(s - w) / static_cast<double>(span));
    return minimum() + (lr_max - minimum()) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  }
};

inline std::size_t resolve_eval_interval(std::size_t requested, std::size_t total_steps) {
  if (requested > 0) return requested;
  if (total_steps >= 2000) return 200;
  return std::max<std::size_t>(1, total_steps / 10);
}

/// A tokenizer together with the model trained on its ids.
struct LanguageModel {
  Tokenizer tokenizer;
  TinyCausalLM model;

  void save(const std::filesystem::path& ckpt) const {
    model.save(ckpt);
    tokenizer.save(vocab_path(ckpt), merges_path(ckpt));
  }

  static LanguageModel load(const std::filesystem::path& ckpt) {
    LanguageModel lm{Tokenizer::load(vocab_path(ckpt), merges_path(ckpt)), TinyCausalLM::load(ckpt)};
    if (lm.model.config().vocab_size != lm.tokenizer.vocabulary().size()) {
      throw CompatibilityError("checkpoint " + ckpt.string() + " expects " +
                               std::to_string(lm.model.config().vocab_size) +
                               " tokens but its vocabulary has " +
                               std::to_string(lm.tokenizer.vocabulary().size()));
    }
    return lm;
  }

  static std::filesystem::path vocab_path(const std::filesystem::path& ckpt) {
    return std::filesystem::path(ckpt.string() + ".vocab");
  }
  static std::filesystem::path merges_path(const std::filesystem::path& ckpt) {
    return std::filesystem::path(ckpt.string() + ".merges");
  }
};

/// bos + prompt + answer + eos. Logit row `first_row + t` predicts answer
/// token t; the final step predicts eos.
struct EncodedItem {
  std::vector<TokenId> ids;
  std::size_t first_row = 0;
  std::size_t steps = 0;

  [[nodiscard]] TokenId target(std::size_t t) const { return ids[first_row + 1 + t]; }
};

inline EncodedItem encode_item(const Tokenizer& tok, const std::string& prompt,
                               const std::string& answer, std::size_t context_len) {
  if (answer.empty()) throw DegenerateInputError("cannot align an empty answer");
  const auto p = tok.encode(prompt).ids;
  const auto a = tok.encode(answer).ids;
  EncodedItem e;
  e.ids.reserve(p.size() + a.size() + 2);
  e.ids.push_back(Vocabulary::kBos);
  e.ids.insert(e.ids.end(), p.begin(), p.end());
  e.ids.insert(e.ids.end(), a.begin(), a.end());
  e.ids.push_back(Vocabulary::kEos);
  e.first_row = p.size();
  e.steps = a.size() + 1;
  // The last id is only a target, so the model sees ids.size() - 1 tokens.
  if (e.ids.size() - 1 > context_len) {
    throw ParameterError("prompt and answer need " + std::to_string(e.ids.size() - 1) +
                         " positions but the context holds " + std::to_string(context_len));
  }
  return e;
}

using LogitRows = std::vector<std::vector<double>>;

/// Answer-position logit rows from a (teacher-forced) logits tensor.
inline LogitRows answer_rows(const ad::Tensor<float>& logits, const EncodedItem& e) {
  const std::size_t v = logits.cols();
  LogitRows rows(e.steps);
  for (std::size_t t = 0; t < e.steps; ++t) {
    const float* r = logits.data.data() + (e.first_row + t) * v;
    rows[t].assign(r, r + v);
  }
  return rows;
}

inline std::span<const TokenId> model_input(const EncodedItem& e) {
  return std::span<const TokenId>(e.ids).first(e.ids.size() - 1);
}

inline LogitRows teacher_rows(const TinyCausalLM& teacher, const EncodedItem& e) {
  return answer_rows(teacher.forward(model_input(e)), e);
}

/// Every student answer step, with teacher logits attached to the first
/// min(|student steps|, |teacher steps|) of them.
struct AlignedSteps {
  std::vector<StepLossInput> steps;
  std::size_t aligned = 0;
};

inline AlignedSteps align_rows(const LogitRows& student, const EncodedItem& student_item,
                               const LogitRows* teacher, double tau, double lambda) {
  AlignedSteps out;
  out.aligned = teacher ? std::min(student.size(), teacher->size()) : 0;
  out.steps.reserve(student.size());
  for (std::size_t t = 0; t < student.size(); ++t) {
    StepLossInput s;
    s.student_logits = LogitVector(student[t]);
    if (t < out.aligned) s.teacher_logits = LogitVector((*teacher)[t]);
    s.gold_token = static_cast<std::size_t>(student_item.target(t));
    s.tau = tau;
    s.lambda = lambda;
    out.steps.push_back(std::move(s));
  }
  return out;
}

/// Tokenizes `answer` with both tokenizers, runs both models teacher-forced on
/// prompt + answer, and pairs answer step t with answer step t.
inline AlignedSteps align_steps(const std::string& prompt, const std::string& answer,
                                const LanguageModel& teacher, const LanguageModel& student,
                                double tau = kDefaultTau, double lambda = kDefaultLambda) {
  const auto et = encode_item(teacher.tokenizer, prompt, answer, teacher.model.config().context_len);
  const auto es = encode_item(student.tokenizer, prompt, answer, student.model.config().context_len);
  const auto tr = teacher_rows(teacher.model, et);
  const auto sr = answer_rows(student.model.forward(model_input(es)), es);
  return align_rows(sr, es, &tr, tau, lambda);
}

/// Transport costs for the non-uniform variant. Uniform 0-1 costs act on the
/// sorted, padded vectors; other kinds act on the raw supports with rows
/// indexing the student vocabulary and columns the teacher vocabulary.
class CostContext {
 public:
  CostContext(CostKind kind, const Tokenizer& student, const LanguageModel& teacher)
      : kind_(kind), teacher_(&teacher) {
    const std::size_t ns = student.vocabulary().size();
    const std::size_t nt = teacher.tokenizer.vocabulary().size();
    switch (kind) {
      case CostKind::uniform01:
        cost_ = CostMatrix::uniform01(std::max(ns, nt));
        break;
      case CostKind::levenshtein:
        cost_ = levenshtein_cost_matrix(student.vocabulary(), teacher.tokenizer.vocabulary());
        break;
      case CostKind::embedding_l2:
        break;
      case CostKind::custom:
        throw ParameterError("custom costs need an explicit matrix");
    }
  }

  CostContext(CostMatrix custom, const Tokenizer& student, const LanguageModel& teacher)
      : kind_(CostKind::custom), teacher_(&teacher) {
    const std::size_t ns = student.vocabulary().size();
    const std::size_t nt = teacher.tokenizer.vocabulary().size();
    if (custom.rows() != ns || custom.cols() != nt) {
      throw ParameterError("cost matrix is " + std::to_string(custom.rows()) + "x" +
                           std::to_string(custom.cols()) + " but the vocabularies are " +
                           std::to_string(ns) + " and " + std::to_string(nt));
    }
    cost_ = std::move(custom);
  }

  [[nodiscard]] CostKind kind() const noexcept { return kind_; }

  /// Embedding costs follow the student's current embeddings.
  void refresh(const TinyCausalLM& student) {
    if (kind_ != CostKind::embedding_l2) return;
    cost_ = embedding_l2_cost_matrix(embedding_matrix(student),
                                     embedding_matrix(teacher_->model));
  }

  /// Optimal transport cost between student and teacher probabilities and its
  /// gradient with respect to the student probabilities, treating the
  /// optimal plan as fixed (the source duals).
  [[nodiscard]] std::pair<double, std::vector<double>> transport(const ProbVector& ps,
                                                                 const ProbVector& qt) const {
    std::vector<double> g(ps.size(), 0.0);
    if (kind_ == CostKind::uniform01) {
      const SortedAlignment al = align_sorted(ps, qt);
      const auto plan = exact_ot(al.student_sorted, al.teacher_sorted, *cost_);
      for (std::size_t i = 0; i < al.student_order.size(); ++i) {
        const std::size_t src = al.student_order[i];
        if (src < ps.size()) g[src] = plan.source_dual[i];
      }
      return {plan.cost, std::move(g)};
    }
    const auto plan = exact_ot(ps, qt, *cost_);
    return {plan.cost, plan.source_dual};
  }

 private:
  static Matrix embedding_matrix(const TinyCausalLM& m) {
    const auto& p = m.parameters().front().value;
    Matrix out(p.shape[0], p.shape[1]);
    for (std::size_t i = 0; i < p.data.size(); ++i) out.data[i] = p.data[i];
    return out;
  }

  CostKind kind_;
  const LanguageModel* teacher_;
  std::optional<CostMatrix> cost_;
};

/// Per-sequence sums over answer steps. `distill` is the W1 sum (closed form
/// or transport cost, depending on the mode) over aligned steps; `kl` the KL
/// sum in kl mode. `grad` holds d(total)/d(logits) row by row.
struct SequenceLoss {
  double ce = 0.0;
  double distill = 0.0;
  std::optional<double> kl;
  double total = 0.0;
  bool has_teacher = false;
  LogitRows grad;
};

inline SequenceLoss sequence_loss(TrainMode mode, const AlignedSteps& al, double lambda,
                                  const CostContext* costs = nullptr) {
  SequenceLoss out;
  out.has_teacher = al.aligned > 0;
  out.grad.reserve(al.steps.size());
  double kl = 0.0;
  for (std::size_t t = 0; t < al.steps.size(); ++t) {
    StepLossInput step = al.steps[t];
    const bool aligned = t < al.aligned;
    StepEvaluation e;
    switch (mode) {
      case TrainMode::raw:
        step.lambda = 0.0;
        e = evaluate_step(aligned ? LossMode::ce_uld : LossMode::ce, step);
        if (e.loss.w1) out.distill += *e.loss.w1;
        break;
      case TrainMode::uld:
        step.lambda = lambda;
        e = evaluate_step(aligned ? LossMode::ce_uld : LossMode::ce, step);
        if (e.loss.w1) out.distill += *e.loss.w1;
        break;
      case TrainMode::kl:
        step.lambda = lambda;
        e = evaluate_step(aligned ? LossMode::ce_kl : LossMode::ce, step);
        if (e.loss.kl) kl += *e.loss.kl;
        if (aligned) {
          out.distill += uld_w1_step(softmax_temp(step.student_logits, step.tau),
                                     softmax_temp(*step.teacher_logits, step.tau));
        }
        break;
      case TrainMode::uld_costed: {
        e = evaluate_step(LossMode::ce, step);
        if (aligned) {
          if (!costs) throw ParameterError("costed mode needs a cost context");
          const ProbVector ps = softmax_temp(step.student_logits, step.tau);
          const ProbVector qt = softmax_temp(*step.teacher_logits, step.tau);
          const auto [value, g] = costs->transport(ps, qt);
          out.distill += value;
          if (lambda != 0.0) detail::add_softmax_vjp(ps.probs(), g, lambda, step.tau, e.grad);
        }
        break;
      }
    }
    out.ce += e.loss.ce;
    out.grad.push_back(std::move(e.grad));
  }
  if (mode == TrainMode::kl) {
    if (out.has_teacher) out.kl = kl;
    out.total = lambda == 0.0 ? out.ce : out.ce + lambda * kl;
  } else if (mode == TrainMode::raw || lambda == 0.0) {
    out.total = out.ce;
  } else {
    out.total = out.ce + lambda * out.distill;
  }
  return out;
}

/// One logged evaluation point.
struct MetricRecord {
  std::size_t step = 0;
  Split split = Split::train;
  double ce = 0.0;
  std::optional<double> uld_w1;
  std::optional<double> kl;
  double total = 0.0;
  double lr = 0.0;
  std::uint32_t seed = 0;

  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

inline std::string metrics_jsonl(const std::vector<MetricRecord>& records) {
  std::ostringstream out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["split"] = to_string(r.split);
    j["ce"] = r.ce;
    j["uld_w1"] = r.uld_w1 ? nlohmann::ordered_json(*r.uld_w1) : nlohmann::ordered_json(nullptr);
    j["kl"] = r.kl ? nlohmann::ordered_json(*r.kl) : nlohmann::ordered_json(nullptr);
    j["total"] = r.total;
    j["lr"] = r.lr;
    j["seed"] = r.seed;
    out << j.dump() << '\n';
  }
  return out.str();
}

inline void save_metrics(const std::filesystem::path& path, const std::vector<MetricRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write metrics file " + path.string());
  out << metrics_jsonl(records);
}

inline std::vector<MetricRecord> load_metrics(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read metrics file " + path.string());
  std::vector<MetricRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    MetricRecord r;
    r.step = j.at("step").get<std::size_t>();
    r.split = parse_split(j.at("split").get<std::string>());
    r.ce = j.at("ce").get<double>();
    if (!j.at("uld_w1").is_null()) r.uld_w1 = j.at("uld_w1").get<double>();
    if (!j.at("kl").is_null()) r.kl = j.at("kl").get<double>();
    r.total = j.at("total").get<double>();
    r.lr = j.at("lr").get<double>();
    r.seed = j.at("seed").get<std::uint32_t>();
    out.push_back(r);
  }
  return out;
}

/// A training example: the student-side encoding plus cached teacher logits.
struct PreparedItem {
  EncodedItem item;
  std::optional<LogitRows> teacher;
};

struct RunResult {
  TinyCausalLM model;
  std::vector<MetricRecord> metrics;
  /// Batch means of the per-sequence CE and distillation sums, one entry per
  /// optimizer step.
  std::vector<double> step_ce;
  std::vector<double> step_distill;
  double wall_seconds = 0.0;
  std::size_t train_items = 0;
  std::size_t skipped_items = 0;
};

namespace detail {

struct Accumulator {
  double ce = 0.0, distill = 0.0, kl = 0.0, total = 0.0;
  std::size_t n = 0;
  bool any_teacher = false;
  bool any_kl = false;

  void add(const SequenceLoss& l) {
    ce += l.ce;
    distill += l.distill;
    total += l.total;
    if (l.kl) {
      kl += *l.kl;
      any_kl = true;
    }
    any_teacher = any_teacher || l.has_teacher;
    ++n;
  }

  MetricRecord record(std::size_t step, Split split, double lr, std::uint32_t seed) const {
    const double d = static_cast<double>(std::max<std::size_t>(n, 1));
    MetricRecord r;
    r.step = step;
    r.split = split;
    r.ce = ce / d;
    if (any_teacher) r.uld_w1 = distill / d;
    if (any_kl) r.kl = kl / d;
    r.total = total / d;
    r.lr = lr;
    r.seed = seed;
    return r;
  }
};

inline SequenceLoss forward_loss(const TinyCausalLM& model, const PreparedItem& p,
                                 const TrainConfig& cfg, const CostContext* costs) {
  const auto logits = model.forward(model_input(p.item));
  const auto rows = answer_rows(logits, p.item);
  const auto al = align_rows(rows, p.item, p.teacher ? &*p.teacher : nullptr, cfg.tau, cfg.lambda);
  return sequence_loss(cfg.mode, al, cfg.lambda, costs);
}

}  // namespace detail

/// Trains `model` on `train`, logging train and validation records every
/// eval interval and at the final step.
inline RunResult fit(TinyCausalLM model, const TrainConfig& cfg, const std::vector<PreparedItem>& train,
                     const std::vector<PreparedItem>& val, CostContext* costs = nullptr) {
  cfg.validate();
  if (train.empty()) throw DegenerateInputError("no training items");
  const auto start = std::chrono::steady_clock::now();
  RunResult res{std::move(model), {}, {}, {}, 0.0, train.size(), 0};
  const std::size_t per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = per_epoch * cfg.epochs;
  const OneCycle sched{cfg.lr_max, total_steps};
  const std::size_t interval = resolve_eval_interval(cfg.eval_interval, total_steps);
  std::mt19937_64 rng(detail::splitmix64(cfg.seed ^ 0x5eed5eedULL));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Adam opt;
  detail::Accumulator window;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < train.size(); b += cfg.batch_size) {
      const std::size_t end = std::min(train.size(), b + cfg.batch_size);
      const float weight = 1.0f / static_cast<float>(end - b);
      if (costs) costs->refresh(res.model);
      double batch_ce = 0.0, batch_distill = 0.0;
      for (std::size_t k = b; k < end; ++k) {
        const PreparedItem& p = train[order[k]];
        auto tr = res.model.trace(model_input(p.item), true);
        const auto& logits = tr.tape.value(tr.logits);
        const auto rows = answer_rows(logits, p.item);
        const auto al = align_rows(rows, p.item, p.teacher ? &*p.teacher : nullptr, cfg.tau, cfg.lambda);
        const SequenceLoss loss = sequence_loss(cfg.mode, al, cfg.lambda, costs);
        const std::size_t v = logits.cols();
        std::vector<float> grad(logits.data.size(), 0.0f);
        for (std::size_t t = 0; t < loss.grad.size(); ++t) {
          float* dst = grad.data() + (p.item.first_row + t) * v;
          for (std::size_t j = 0; j < v; ++j) dst[j] = static_cast<float>(loss.grad[t][j]) * weight;
        }
        const ad::Var l = tr.tape.external_loss(tr.logits, static_cast<float>(loss.total), std::move(grad));
        tr.tape.backward(l);
        res.model.accumulate_grads(tr);
        window.add(loss);
        batch_ce += loss.ce;
        batch_distill += loss.distill;
      }
      const double lr = sched.at(step);
      opt.step(res.model, static_cast<float>(lr));
      ++step;
      res.step_ce.push_back(batch_ce / static_cast<double>(end - b));
      res.step_distill.push_back(batch_distill / static_cast<double>(end - b));
      if (step % interval == 0 || step == total_steps) {
        res.metrics.push_back(window.record(step, Split::train, lr, cfg.seed));
        window = {};
        if (!val.empty()) {
          if (costs) costs->refresh(res.model);
          detail::Accumulator v;
          for (const auto& p : val) v.add(detail::forward_loss(res.model, p, cfg, costs));
          res.metrics.push_back(v.record(step, Split::val, lr, cfg.seed));
        }
      }
    }
  }
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

/// Indices of ⌈fraction·n⌉ items chosen by a seeded shuffle, in ascending order.
inline std::vector<std::size_t> select_fraction(std::size_t n, double fraction, std::uint32_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ParameterError("dataset_fraction must lie in (0, 1]");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(detail::splitmix64(seed ^ 0xf4ac7104ULL));
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  idx.resize(std::min(n, keep));
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct TeacherConfig {
  std::size_t merges = 256;
  TrainConfig train = [] {
    TrainConfig c;
    c.mode = TrainMode::raw;
    c.epochs = 30;
    c.lr_max = 3e-3;
    c.model = ModelConfig{0, 64, 64, 4, 2, 0};
    return c;
  }();
};

inline std::string teacher_text(const CorpusItem& it) { return it.prompt() + it.answer; }

/// Pair-merge tokenizer trained on the train split, then a model fitted to
/// the gold answers of the train split.
inline std::pair<LanguageModel, RunResult> train_teacher(const std::vector<CorpusItem>& items,
                                                         const TeacherConfig& tc) {
  std::vector<std::string> texts;
  for (const auto& it : items) {
    if (it.split == Split::train) texts.push_back(teacher_text(it));
  }
  if (texts.empty()) throw DegenerateInputError("teacher needs training items");
  Tokenizer tok = bpe_train(texts, tc.merges);
  TrainConfig cfg = tc.train;
  cfg.model.vocab_size = tok.vocabulary().size();
  cfg.model.seed = cfg.seed;
  std::vector<PreparedItem> train, val;
  for (const auto& it : items) {
    if (it.split == Split::test) continue;
    PreparedItem p{encode_item(tok, it.prompt(), it.answer, cfg.model.context_len), std::nullopt};
    (it.split == Split::train ? train : val).push_back(std::move(p));
  }
  RunResult run = fit(TinyCausalLM::init(cfg.model), cfg, train, val);
  LanguageModel lm{std::move(tok), run.model};
  return {std::move(lm), std::move(run)};
}

/// Greedy answer for `prompt`, decoded to text.
inline std::string generate_answer(const LanguageModel& lm, const std::string& prompt,
                                   std::size_t max_new) {
  TokenSequence seq;
  seq.ids.push_back(Vocabulary::kBos);
  const auto p = lm.tokenizer.encode(prompt).ids;
  seq.ids.insert(seq.ids.end(), p.begin(), p.end());
  const std::size_t prefix = seq.ids.size();
  if (prefix > lm.model.config().context_len) {
    throw ParameterError("prompt of " + std::to_string(prefix) + " tokens exceeds the context");
  }
  const auto out = greedy_generate(lm.model, seq, max_new);
  return lm.tokenizer.decode(std::vector<TokenId>(out.ids.begin() + static_cast<std::ptrdiff_t>(prefix), out.ids.end()));
}

inline constexpr std::size_t kDefaultMaxAnswerTokens = 24;

/// Replaces train and val answers with the teacher's greedy answers; test
/// items keep their gold answers.
inline std::vector<CorpusItem> teacher_answers(const LanguageModel& teacher,
                                               const std::vector<CorpusItem>& items,
                                               std::size_t max_new = kDefaultMaxAnswerTokens) {
  std::vector<CorpusItem> out = items;
  for (auto& it : out) {
    if (it.split != Split::test) it.answer = generate_answer(teacher, it.prompt(), max_new);
  }
  return out;
}

/// Lowercased, whitespace-split bag-of-tokens F1; two empty strings score 1.
inline double token_f1(std::string_view prediction, std::string_view gold) {
  auto bag = [](std::string_view s) {
    std::map<std::string, int> b;
    std::string lower(s);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    std::istringstream in(lower);
    std::string w;
    while (in >> w) ++b[w];
    return b;
  };
  const auto p = bag(prediction);
  const auto g = bag(gold);
  int np = 0, ng = 0, common = 0;
  for (const auto& [w, c] : p) np += c;
  for (const auto& [w, c] : g) ng += c;
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;
  for (const auto& [w, c] : p) {
    if (auto it = g.find(w); it != g.end()) common += std::min(c, it->second);
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / np;
  const double recall = static_cast<double>(common) / ng;
  return 2.0 * precision * recall / (precision + recall);
}

struct EvalReport {
  double token_accuracy = 0.0;
  double perplexity = 0.0;
  double token_f1 = 0.0;
  std::size_t items = 0;
  std::size_t tokens = 0;
};

/// Teacher-forced accuracy and perplexity on the gold answers (eos included)
/// plus F1 of greedy answers against gold.
inline EvalReport evaluate(const LanguageModel& lm, const std::vector<CorpusItem>& items,
                           std::size_t max_new = kDefaultMaxAnswerTokens) {
  EvalReport r;
  double nll = 0.0, f1 = 0.0;
  std::size_t correct = 0;
  for (const auto& it : items) {
    const auto e = encode_item(lm.tokenizer, it.prompt(), it.answer, lm.model.config().context_len);
    const auto rows = answer_rows(lm.model.forward(model_input(e)), e);
    for (std::size_t t = 0; t < rows.size(); ++t) {
      const auto gold = static_cast<std::size_t>(e.target(t));
      if (argmax(std::span<const double>(rows[t])) == gold) ++correct;
      nll += ce_step(softmax_temp(LogitVector(rows[t]), 1.0), gold);
    }
    r.tokens += rows.size();
    f1 += token_f1(generate_answer(lm, it.prompt(), max_new), it.answer);
    ++r.items;
  }
  if (r.items == 0) throw DegenerateInputError("evaluation needs at least one item");
  r.token_accuracy = static_cast<double>(correct) / static_cast<double>(r.tokens);
  r.perplexity = std::exp(nll / static_cast<double>(r.tokens));
  r.token_f1 = f1 / static_cast<double>(r.items);
  return r;
}

inline Tokenizer student_char_tokenizer() { return char_tokenizer(kCorpusAlphabet); }

/// Distils `teacher` into a fresh student over `student_tok` using the train
/// split (optionally a seeded fraction of it) and logs validation metrics.
/// Items with empty answers are skipped.
inline RunResult train_student(const TrainConfig& cfg_in, const std::vector<CorpusItem>& items,
                               const LanguageModel& teacher, const Tokenizer& student_tok,
                               std::optional<CostMatrix> custom_cost = std::nullopt) {
  cfg_in.validate();
  TrainConfig cfg = cfg_in;
  cfg.model.vocab_size = student_tok.vocabulary().size();
  cfg.model.seed = cfg.seed;
  if (cfg.mode == TrainMode::kl && !(teacher.tokenizer.vocabulary() == student_tok.vocabulary())) {
    throw SupportError("KL needs one shared vocabulary: teacher has " +
                       std::to_string(teacher.tokenizer.vocabulary().size()) +
                       " tokens, student has " + std::to_string(student_tok.vocabulary().size()));
  }
  std::optional<CostContext> costs;
  if (cfg.mode == TrainMode::uld_costed) {
    costs = custom_cost ? CostContext(std::move(*custom_cost), student_tok, teacher)
                        : CostContext(cfg.cost_kind, student_tok, teacher);
  }

  std::vector<CorpusItem> train_items;
  std::vector<PreparedItem> val;
  std::size_t skipped = 0;
  for (const auto& it : items) {
    if (it.split == Split::test) continue;
    if (it.answer.empty()) {
      ++skipped;
      continue;
    }
    if (it.split == Split::train) {
      train_items.push_back(it);
      continue;
    }
    const auto te = encode_item(teacher.tokenizer, it.prompt(), it.answer, teacher.model.config().context_len);
    val.push_back({encode_item(student_tok, it.prompt(), it.answer, cfg.model.context_len),
                   teacher_rows(teacher.model, te)});
  }
  std::vector<PreparedItem> train;
  for (std::size_t i : select_fraction(train_items.size(), cfg.dataset_fraction, cfg.seed)) {
    const auto& it = train_items[i];
    const auto te = encode_item(teacher.tokenizer, it.prompt(), it.answer, teacher.model.config().context_len);
    train.push_back({encode_item(student_tok, it.prompt(), it.answer, cfg.model.context_len),
                     teacher_rows(teacher.model, te)});
  }
  RunResult res = fit(TinyCausalLM::init(cfg.model), cfg, train, val, costs ? &*costs : nullptr);
  res.skipped_items = skipped;
  return res;
}

/// Costed variant: the W1 term is replaced by exact transport under the
/// configured cost kind.
inline RunResult train_student_costed(TrainConfig cfg, const std::vector<CorpusItem>& items,
                                      const LanguageModel& teacher, const Tokenizer& student_tok,
                                      std::optional<CostMatrix> custom_cost = std::nullopt) {
  cfg.mode = TrainMode::uld_costed;
  return train_student(cfg, items, teacher, student_tok, std::move(custom_cost));
}

struct AblationRow {
  double lambda = 0.0;
  std::string metric;
  double value = 0.0;
  std::uint32_t seed = 0;
};

inline const std::vector<std::string>& ablation_metrics() {
  static const std::vector<std::string> names = {"token_f1", "token_accuracy", "perplexity",
                                                 "val_ce", "val_uld_w1"};
  return names;
}

/// One ULD run per lambda with a shared seed and shared teacher answers.
inline std::vector<AblationRow> ablate_lambda(const std::vector<double>& lambdas, TrainConfig base,
                                              const std::vector<CorpusItem>& items,
                                              const LanguageModel& teacher, const Tokenizer& student_tok,
                                              const std::string& metric = "token_f1") {
  if (lambdas.empty()) throw ParameterError("lambda list is empty");
  if (std::find(lambdas.begin(), lambdas.end(), 0.0) == lambdas.end()) {
    throw ParameterError("lambda list must include 0 as the raw-text reference");
  }
  const auto& names = ablation_metrics();
  if (std::find(names.begin(), names.end(), metric) == names.end()) {
    throw ParameterError("unknown ablation metric '" + metric + "'");
  }
  const auto test = select_split(items, Split::test);
  std::vector<AblationRow> rows;
  for (double lambda : lambdas) {
    TrainConfig cfg = base;
    cfg.mode = TrainMode::uld;
    cfg.lambda = lambda;
    RunResult run = train_student(cfg, items, teacher, student_tok);
    double value = 0.0;
    if (metric == "val_ce" || metric == "val_uld_w1") {
      const auto it = std::find_if(run.metrics.rbegin(), run.metrics.rend(),
                                   [](const MetricRecord& r) { return r.split == Split::val; });
      if (it == run.metrics.rend()) throw DegenerateInputError("no validation records");
      value = metric == "val_ce" ? it->ce : it->uld_w1.value_or(0.0);
    } else {
      const auto report = evaluate(LanguageModel{student_tok, run.model}, test);
      value = metric == "token_f1" ? report.token_f1
              : metric == "token_accuracy" ? report.token_accuracy
                                           : report.perplexity;
    }
    rows.push_back({lambda, metric, value, cfg.seed});
  }
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "lambda,metric,value,seed\n";
  out.precision(17);
  for (const auto& r : rows) out << r.lambda << ',' << r.metric << ',' << r.value << ',' << r.seed << '\n';
  return out.str();
}

}  // namespace uld
