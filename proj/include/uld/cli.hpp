#pragma once

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "uld/bench.hpp"
#include "uld/corpus.hpp"
#include "uld/distill.hpp"
#include "uld/error.hpp"
#include "uld/tokenizer.hpp"

namespace uld::cli {

struct KeySpec {
  std::string key;
  std::string help;
};

/// Every key a config file or flag may set.
inline const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> keys = {
      {"seed", "random seed for corpus, initialization and shuffling"},
      {"lambda", "weight of the distillation term"},
      {"tau", "softmax temperature of the distillation term"},
      {"epochs", "passes over the training split"},
      {"batch_size", "sequences per optimizer step"},
      {"lr_max", "peak learning rate of the one-cycle schedule"},
      {"mode", "objective: raw, uld, kl or uld_costed"},
      {"dataset_fraction", "fraction of training items used, in (0, 1]"},
      {"cost_kind", "transport cost for uld_costed: uniform01, levenshtein or embedding_l2"},
      {"eval_interval", "optimizer steps between metric records (0 = automatic)"},
      {"context_len", "model context length in tokens"},
      {"d_model", "model width"},
      {"n_heads", "attention heads"},
      {"n_layers", "transformer blocks"},
      {"merges", "pair merges of the teacher tokenizer"},
      {"student_tokenizer", "student tokenizer: char or teacher"},
      {"n_items", "corpus size"},
      {"max_new_tokens", "greedy generation limit"},
      {"lambdas", "comma-separated lambda grid; must include 0"},
      {"metric", "ablation metric: token_f1, token_accuracy, perplexity, val_ce or val_uld_w1"},
      {"split", "corpus split to evaluate: train, val or test"},
      {"corpus", "corpus JSON-lines file"},
      {"teacher_ckpt", "teacher checkpoint path"},
      {"student_ckpt", "student checkpoint path"},
      {"out_dir", "output directory (default: $ULD_OUT or .)"},
      {"probe", "vocabulary file whose tokens are looked up"},
      {"reference", "vocabulary file looked up against"},
      {"n", "support size"},
      {"trials", "random pairs to check"},
      {"reps", "timing repetitions per size"},
  };
  return keys;
}

inline const KeySpec& key_spec(const std::string& key) {
  for (const auto& k : schema()) {
    if (k.key == key) return k;
  }
  throw ConfigError("unknown key '" + key + "'");
}

struct CommandSpec {
  std::string name;
  std::string about;
  std::vector<std::string> keys;
  std::map<std::string, std::string> defaults;
};

namespace detail {

inline std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::map<std::string, std::string> train_defaults(const TrainConfig& c) {
  return {{"seed", std::to_string(c.seed)},
          {"lambda", num(c.lambda)},
          {"tau", num(c.tau)},
          {"epochs", std::to_string(c.epochs)},
          {"batch_size", std::to_string(c.batch_size)},
          {"lr_max", num(c.lr_max)},
          {"mode", to_string(c.mode)},
          {"dataset_fraction", num(c.dataset_fraction)},
          {"cost_kind", to_string(c.cost_kind)},
          {"eval_interval", std::to_string(c.eval_interval)},
          {"context_len", std::to_string(c.model.context_len)},
          {"d_model", std::to_string(c.model.d_model)},
          {"n_heads", std::to_string(c.model.n_heads)},
          {"n_layers", std::to_string(c.model.n_layers)}};
}

inline std::string default_out_dir() {
  const char* env = std::getenv("ULD_OUT");
  return env && *env ? std::string(env) : std::string(".");
}

}  // namespace detail

inline const std::vector<CommandSpec>& commands() {
  static const std::vector<CommandSpec> specs = [] {
    const std::vector<std::string> train_keys = {"seed", "lambda", "tau", "epochs", "batch_size", "lr_max", "mode",
                                                 "dataset_fraction", "cost_kind", "eval_interval", "context_len",
                                                 "d_model", "n_heads", "n_layers"};
    auto with = [](std::vector<std::string> base, std::initializer_list<std::string> more) {
      base.insert(base.end(), more);
      return base;
    };
    const std::string out = detail::default_out_dir();
    auto student = detail::train_defaults(TrainConfig{});
    student.insert({{"student_tokenizer", "char"}, {"out_dir", out}, {"lambdas", "0,0.5,1,1.5,2,3"},
                    {"metric", "token_f1"}, {"corpus", out + "/answers.jsonl"},
                    {"teacher_ckpt", out + "/teacher.ckpt"}, {"student_ckpt", out + "/student.ckpt"}});
    const TeacherConfig tc;
    auto teacher = detail::train_defaults(tc.train);
    teacher.insert({{"merges", std::to_string(tc.merges)}, {"out_dir", out}, {"corpus", out + "/corpus.jsonl"},
                    {"teacher_ckpt", out + "/teacher.ckpt"}});
    std::vector<std::string> teacher_keys;
    for (const auto& k : train_keys) {
      if (k != "lambda" && k != "tau" && k != "mode" && k != "dataset_fraction" && k != "cost_kind") {
        teacher_keys.push_back(k);
      }
    }
    std::vector<CommandSpec> specs{
        {"gen-corpus", "generate the templated question-answer corpus",
         {"seed", "n_items", "out_dir"},
         {{"seed", "0"}, {"n_items", "1000"}, {"out_dir", out}}},
        {"train-teacher", "fit a pair-merge tokenizer and a teacher model to the train split",
         with(teacher_keys, {"merges", "corpus", "teacher_ckpt", "out_dir"}),
         teacher},
        {"gen-answers", "replace train and val answers with greedy teacher answers",
         {"corpus", "teacher_ckpt", "max_new_tokens", "out_dir"},
         {{"corpus", out + "/corpus.jsonl"}, {"teacher_ckpt", out + "/teacher.ckpt"},
          {"max_new_tokens", std::to_string(kDefaultMaxAnswerTokens)}, {"out_dir", out}}},
        {"distill", "train a student against the frozen teacher",
         with(train_keys, {"student_tokenizer", "corpus", "teacher_ckpt", "student_ckpt", "out_dir"}),
         student},
        {"ablate-lambda", "one distillation run per lambda with a shared seed",
         with(train_keys, {"student_tokenizer", "lambdas", "metric", "corpus", "teacher_ckpt", "out_dir"}),
         student},
        {"eval", "token accuracy, perplexity and F1 of a checkpoint on one split",
         {"student_ckpt", "corpus", "split", "max_new_tokens", "out_dir"},
         {{"student_ckpt", out + "/student.ckpt"}, {"corpus", out + "/answers.jsonl"}, {"split", "test"},
          {"max_new_tokens", std::to_string(kDefaultMaxAnswerTokens)}, {"out_dir", out}}},
        {"vocab-overlap", "percentage of probe tokens present in the reference vocabulary",
         {"probe", "reference"},
         {}},
        {"ot-check", "largest gap between the closed form and twice the exact transport cost",
         {"n", "trials", "seed"},
         {{"n", "16"}, {"trials", "100"}, {"seed", "0"}}},
        {"bench-ot", "time the closed form against the exact solver and fit log-log slopes",
         {"reps", "seed", "out_dir"},
         {{"reps", "3"}, {"seed", "0"}, {"out_dir", out}}},
    };
    // Shared default tables carry keys some commands do not accept.
    for (auto& spec : specs) {
      std::erase_if(spec.defaults, [&](const auto& kv) {
        return std::find(spec.keys.begin(), spec.keys.end(), kv.first) == spec.keys.end();
      });
    }
    return specs;
  }();
  return specs;
}

/// Flat `key = value` lines; `#` starts a comment; unknown keys are errors.
inline std::map<std::string, std::string> parse_config_text(std::string_view text, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  const auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      (void)key_spec(key);
    } catch (const ConfigError&) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
    if (value.empty()) throw ConfigError(where + ": empty value for '" + key + "'");
    out[key] = value;
  }
  return out;
}

inline std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path.string());
}

/// Resolved settings of one invocation: defaults < file < flags.
class Settings {
 public:
  explicit Settings(std::map<std::string, std::string> values) : values_(std::move(values)) {}

  [[nodiscard]] bool has(const std::string& key) const { return values_.count(key) > 0; }

  [[nodiscard]] const std::string& str(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required setting '" + key + "'");
    return it->second;
  }

  [[nodiscard]] std::uint64_t u64(const std::string& key) const {
    const std::string& s = str(key);
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
    }
    return v;
  }

  [[nodiscard]] std::uint32_t u32(const std::string& key) const {
    const auto v = u64(key);
    if (v > 0xffffffffULL) throw ConfigError(key + ": value " + std::to_string(v) + " exceeds 32 bits");
    return static_cast<std::uint32_t>(v);
  }

  [[nodiscard]] double real(const std::string& key) const {
    const std::string& s = str(key);
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) {
      throw ConfigError(key + ": expected a number, got '" + s + "'");
    }
    return v;
  }

  [[nodiscard]] std::vector<double> reals(const std::string& key) const {
    std::vector<double> out;
    std::istringstream in(str(key));
    std::string part;
    while (std::getline(in, part, ',')) {
      const Settings one(std::map<std::string, std::string>{{key, part}});
      out.push_back(one.real(key));
    }
    if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
    return out;
  }

  [[nodiscard]] std::filesystem::path out_dir() const {
    std::filesystem::path p = str("out_dir");
    std::filesystem::create_directories(p);
    return p;
  }

  [[nodiscard]] TrainConfig train_config(TrainConfig c) const {
    try {
      c.seed = u32("seed");
      if (has("lambda")) c.lambda = real("lambda");
      if (has("tau")) c.tau = real("tau");
      c.epochs = u64("epochs");
      c.batch_size = u64("batch_size");
      c.lr_max = real("lr_max");
      if (has("mode")) c.mode = parse_train_mode(str("mode"));
      if (has("dataset_fraction")) c.dataset_fraction = real("dataset_fraction");
      if (has("cost_kind")) c.cost_kind = parse_cost_kind(str("cost_kind"));
      c.eval_interval = u64("eval_interval");
      c.model.context_len = u64("context_len");
      c.model.d_model = u64("d_model");
      c.model.n_heads = u64("n_heads");
      c.model.n_layers = u64("n_layers");
      c.validate();
      ModelConfig probe = c.model;
      probe.vocab_size = 1;
      probe.validate();
    } catch (const ParameterError& e) {
      throw ConfigError(e.what());
    }
    return c;
  }

 private:
  std::map<std::string, std::string> values_;
};

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

inline Tokenizer student_tokenizer(const Settings& s, const LanguageModel& teacher) {
  const std::string& kind = s.str("student_tokenizer");
  if (kind == "char") return student_char_tokenizer();
  if (kind == "teacher") return teacher.tokenizer;
  throw ConfigError("student_tokenizer: expected char or teacher, got '" + kind + "'");
}

inline int gen_corpus_cmd(const Settings& s, std::ostream& out) {
  const auto n = s.u64("n_items");
  if (n == 0) throw ConfigError("n_items must be positive");
  const auto items = gen_corpus(s.u64("seed"), n);
  const auto path = s.out_dir() / "corpus.jsonl";
  save_corpus(path, items);
  out << "wrote " << items.size() << " items to " << path.string() << " (train "
      << select_split(items, Split::train).size() << ", val " << select_split(items, Split::val).size()
      << ", test " << select_split(items, Split::test).size() << ")\n";
  return 0;
}

inline int train_teacher_cmd(const Settings& s, std::ostream& out) {
  TeacherConfig tc;
  tc.merges = s.u64("merges");
  tc.train = s.train_config(tc.train);
  const auto items = load_corpus(s.str("corpus"));
  const auto dir = s.out_dir();
  auto [teacher, run] = train_teacher(items, tc);
  const std::filesystem::path ckpt = s.str("teacher_ckpt");
  if (ckpt.has_parent_path()) std::filesystem::create_directories(ckpt.parent_path());
  teacher.save(ckpt);
  save_metrics(dir / "teacher_metrics.jsonl", run.metrics);
  out << "teacher: " << teacher.tokenizer.vocabulary().size() << " tokens, " << run.metrics.back().step
      << " steps, final ce " << run.metrics.back().ce << ", saved to " << ckpt.string() << "\n";
  return 0;
}

inline int gen_answers_cmd(const Settings& s, std::ostream& out) {
  const auto teacher = LanguageModel::load(s.str("teacher_ckpt"));
  const auto items = load_corpus(s.str("corpus"));
  const auto answered = teacher_answers(teacher, items, s.u64("max_new_tokens"));
  const auto path = s.out_dir() / "answers.jsonl";
  save_corpus(path, answered);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < items.size(); ++i) changed += answered[i].answer != items[i].answer;
  out << "wrote " << answered.size() << " items to " << path.string() << "; " << changed
      << " answers differ from gold\n";
  return 0;
}

inline int distill_cmd(const Settings& s, std::ostream& out) {
  const TrainConfig cfg = s.train_config(TrainConfig{});
  const auto teacher = LanguageModel::load(s.str("teacher_ckpt"));
  const auto stok = student_tokenizer(s, teacher);
  const auto items = load_corpus(s.str("corpus"));
  const auto dir = s.out_dir();
  const RunResult run = train_student(cfg, items, teacher, stok);
  const std::filesystem::path ckpt = s.str("student_ckpt");
  if (ckpt.has_parent_path()) std::filesystem::create_directories(ckpt.parent_path());
  LanguageModel{stok, run.model}.save(ckpt);
  save_metrics(dir / "metrics.jsonl", run.metrics);
  const MetricRecord& last = run.metrics.back();
  out << "mode " << to_string(cfg.mode) << ", seed " << cfg.seed << ", " << last.step << " steps, "
      << run.train_items << " train items";
  if (run.skipped_items) out << " (" << run.skipped_items << " empty answers skipped)";
  out << "\nfinal " << to_string(last.split) << " ce " << last.ce;
  if (last.uld_w1) out << ", uld_w1 " << *last.uld_w1;
  if (last.kl) out << ", kl " << *last.kl;
  out << "\nwall " << std::fixed << std::setprecision(2) << run.wall_seconds << " s\n";
  return 0;
}

inline int ablate_cmd(const Settings& s, std::ostream& out) {
  const TrainConfig cfg = s.train_config(TrainConfig{});
  const auto lambdas = s.reals("lambdas");
  const auto teacher = LanguageModel::load(s.str("teacher_ckpt"));
  const auto stok = student_tokenizer(s, teacher);
  const auto items = load_corpus(s.str("corpus"));
  std::vector<AblationRow> rows;
  try {
    rows = ablate_lambda(lambdas, cfg, items, teacher, stok, s.str("metric"));
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  const auto csv = ablation_csv(rows);
  write_text(s.out_dir() / "ablation.csv", csv);
  out << csv;
  return 0;
}

inline int eval_cmd(const Settings& s, std::ostream& out) {
  Split split;
  try {
    split = parse_split(s.str("split"));
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  const auto lm = LanguageModel::load(s.str("student_ckpt"));
  const auto items = select_split(load_corpus(s.str("corpus")), split);
  const auto r = evaluate(lm, items, s.u64("max_new_tokens"));
  nlohmann::ordered_json j;
  j["split"] = to_string(split);
  j["items"] = r.items;
  j["tokens"] = r.tokens;
  j["token_accuracy"] = r.token_accuracy;
  j["perplexity"] = r.perplexity;
  j["token_f1"] = r.token_f1;
  write_text(s.out_dir() / "eval.json", j.dump(2) + "\n");
  out << "token_accuracy=" << r.token_accuracy << " perplexity=" << r.perplexity << " token_f1=" << r.token_f1
      << "\n";
  return 0;
}

inline int vocab_overlap_cmd(const Settings& s, std::ostream& out) {
  const auto probe = Vocabulary::load(s.str("probe"));
  const auto reference = Vocabulary::load(s.str("reference"));
  out << "overlap_pct=" << std::fixed << std::setprecision(2) << vocab_overlap(probe, reference) << "\n";
  return 0;
}

inline int ot_check_cmd(const Settings& s, std::ostream& out) {
  const double worst = ot_check(s.u64("n"), s.u64("trials"), s.u64("seed"));
  out << "max_abs_diff=" << std::scientific << std::setprecision(3) << worst << "\n";
  return worst < 1e-9 ? 0 : 2;
}

inline int bench_cmd(const Settings& s, std::ostream& out) {
  BenchOptions opt;
  opt.reps = s.u64("reps");
  opt.seed = s.u64("seed");
  if (opt.reps == 0) throw ConfigError("reps must be positive");
  const auto r = bench_ot(opt);
  write_text(s.out_dir() / "bench_ot.csv", bench_csv(r));
  for (const auto& [method, slope] : r.slopes) out << "slope," << method << ',' << slope << "\n";
  out << "closed_form_seconds_at_" << opt.closed_sizes.back() << ','
      << r.median("closed_form", opt.closed_sizes.back()) << "\n";
  return 0;
}

inline int dispatch(const std::string& name, const Settings& s, std::ostream& out) {
  if (name == "gen-corpus") return gen_corpus_cmd(s, out);
  if (name == "train-teacher") return train_teacher_cmd(s, out);
  if (name == "gen-answers") return gen_answers_cmd(s, out);
  if (name == "distill") return distill_cmd(s, out);
  if (name == "ablate-lambda") return ablate_cmd(s, out);
  if (name == "eval") return eval_cmd(s, out);
  if (name == "vocab-overlap") return vocab_overlap_cmd(s, out);
  if (name == "ot-check") return ot_check_cmd(s, out);
  if (name == "bench-ot") return bench_cmd(s, out);
  throw ConfigError("unknown subcommand " + name);
}

}  // namespace detail

/// The option parser: one subcommand per CommandSpec, one `--key` flag per
/// accepted key, plus `--config`.
struct Parser {
  CLI::App app{"Cross-tokenizer logit distillation toolkit", "uld"};
  std::map<std::string, std::map<std::string, std::string>> flags;
  std::map<std::string, std::string> config_paths;
  std::map<std::string, CLI::App*> subs;
  std::map<std::string, std::map<std::string, CLI::Option*>> options;

  Parser() {
    app.require_subcommand(1);
    for (const auto& cmd : commands()) {
      CLI::App* sub = app.add_subcommand(cmd.name, cmd.about);
      subs[cmd.name] = sub;
      sub->add_option("--config", config_paths[cmd.name], "file of 'key = value' lines");
      for (const auto& key : cmd.keys) {
        std::string help = key_spec(key).help;
        if (auto d = cmd.defaults.find(key); d != cmd.defaults.end()) help += " [default: " + d->second + "]";
        options[cmd.name][key] = sub->add_option("--" + key, flags[cmd.name][key], help);
      }
    }
  }

  [[nodiscard]] std::string help(const std::string& command) const { return subs.at(command)->help(); }
};

/// Parses argv and runs the chosen subcommand. Returns the process exit code:
/// 0 on success, 1 for configuration errors, 2 for runtime failures.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Parser p;
  try {
    p.app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    // Help for the subcommand that asked for it, or the top level.
    for (const auto& [name, sub] : p.subs) {
      if (sub->parsed()) {
        out << sub->help();
        return 0;
      }
    }
    out << p.app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << p.app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  std::string name;
  for (const auto& [n, sub] : p.subs) {
    if (sub->parsed()) name = n;
  }
  try {
    const CommandSpec& spec = *std::find_if(commands().begin(), commands().end(),
                                            [&](const CommandSpec& c) { return c.name == name; });
    std::map<std::string, std::string> values = spec.defaults;
    if (!p.config_paths[name].empty()) {
      // Keys meant for other subcommands may share one experiment file.
      for (auto& [k, v] : parse_config_file(p.config_paths[name])) {
        if (std::find(spec.keys.begin(), spec.keys.end(), k) != spec.keys.end()) values[k] = v;
      }
    }
    for (const auto& key : spec.keys) {
      if (p.options[name][key]->count() > 0) values[key] = p.flags[name][key];
    }
    for (const auto& key : spec.keys) {
      if (!values.count(key)) throw ConfigError(name + " needs --" + key);
    }
    return detail::dispatch(name, Settings(std::move(values)), out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace uld::cli
