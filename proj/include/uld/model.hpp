#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "uld/autodiff.hpp"
#include "uld/error.hpp"
#include "uld/tokenizer.hpp"

namespace uld {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t context_len = 64;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::uint32_t seed = 0;

  void validate() const {
    if (vocab_size == 0) throw ParameterError("vocab_size must be positive");
    if (context_len < 2) throw ParameterError("context_len must be at least 2");
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
      throw ParameterError("d_model (" + std::to_string(d_model) +
                           ") must be a positive multiple of n_heads (" + std::to_string(n_heads) + ")");
    }
    if (n_layers == 0) throw ParameterError("n_layers must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Parameter {
  std::string name;
  ad::Tensor<float> value;
  std::vector<float> grad;
  std::vector<float> adam_m;
  std::vector<float> adam_v;
};

inline constexpr char kCheckpointMagic[4] = {'U', 'L', 'D', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Decoder-only transformer: token + learned position embeddings, pre-norm
/// blocks of causal multi-head attention and a GELU feed-forward, final RMS
/// norm, output projection tied to the token embedding.
class TinyCausalLM {
 public:
  /// Everything recorded for one forward pass.
  struct Trace {
    ad::Tape<float> tape;
    std::vector<ad::Var> params;
    ad::Var logits;
  };

  static TinyCausalLM init(const ModelConfig& cfg) {
    cfg.validate();
    TinyCausalLM m;
    m.cfg_ = cfg;
    m.declare();
    std::mt19937 rng(cfg.seed);
    std::normal_distribution<float> normal(0.0f, 0.02f);
    for (auto& p : m.params_) {
      if (p.name == "final_norm") {
        std::fill(p.value.data.begin(), p.value.data.end(), 1.0f);
      } else {
        for (auto& v : p.value.data) v = normal(rng);
      }
    }
    return m;
  }

  [[nodiscard]] const ModelConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] std::vector<Parameter>& parameters() noexcept { return params_; }
  [[nodiscard]] const std::vector<Parameter>& parameters() const noexcept { return params_; }

  [[nodiscard]] Parameter& parameter(const std::string& name) {
    for (auto& p : params_) {
      if (p.name == name) return p;
    }
    throw ParameterError("no parameter named " + name);
  }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.data.size();
    return n;
  }

  /// Records the forward pass over `ids` on a fresh tape.
  [[nodiscard]] Trace trace(std::span<const TokenId> ids, bool with_grad) const {
    if (ids.empty()) throw ParameterError("forward needs at least one token");
    if (ids.size() > cfg_.context_len) {
      throw ParameterError("prefix of " + std::to_string(ids.size()) + " tokens exceeds context of " +
                           std::to_string(cfg_.context_len));
    }
    Trace tr;
    auto& t = tr.tape;
    for (const auto& p : params_) tr.params.push_back(t.leaf(p.value, with_grad));
    const std::size_t n = ids.size();
    const std::size_t d = cfg_.d_model;
    const std::size_t heads = cfg_.n_heads;
    const std::size_t hd = d / heads;

    std::vector<std::size_t> tok(n);
    std::vector<std::size_t> pos(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= cfg_.vocab_size) {
        throw ParameterError("token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                             std::to_string(cfg_.vocab_size));
      }
      tok[i] = static_cast<std::size_t>(ids[i]);
      pos[i] = i;
    }
    const auto P = [&](std::size_t idx) { return tr.params[idx]; };
    ad::Var x = t.add(t.gather_rows(P(0), tok), t.gather_rows(P(1), pos));
    const float att_scale = 1.0f / std::sqrt(static_cast<float>(hd));
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      const std::size_t base = 2 + l * kPerLayer;
      const ad::Var h = t.rms_norm(x, P(base + 0));
      const ad::Var q = t.matmul(h, P(base + 1));
      const ad::Var k = t.matmul(h, P(base + 2));
      const ad::Var v = t.matmul(h, P(base + 3));
      std::vector<ad::Var> outs;
      outs.reserve(heads);
      for (std::size_t hh = 0; hh < heads; ++hh) {
        const ad::Var qh = t.slice_cols(q, hh * hd, hd);
        const ad::Var kh = t.slice_cols(k, hh * hd, hd);
        const ad::Var vh = t.slice_cols(v, hh * hd, hd);
        ad::Var s = t.scale(t.matmul_nt(qh, kh), att_scale);
        s = t.softmax_rows(t.causal_mask_add(s));
        outs.push_back(t.matmul(s, vh));
      }
      const ad::Var att = heads == 1 ? outs[0] : t.concat_cols(outs);
      x = t.add(x, t.matmul(att, P(base + 4)));
      const ad::Var h2 = t.rms_norm(x, P(base + 5));
      const ad::Var ff = t.matmul(t.gelu(t.matmul(h2, P(base + 6))), P(base + 7));
      x = t.add(x, ff);
    }
    x = t.rms_norm(x, P(params_.size() - 1));
    tr.logits = t.matmul_nt(x, P(0));
    return tr;
  }

  /// Logits of shape (prefix_len, vocab_size).
  [[nodiscard]] ad::Tensor<float> forward(std::span<const TokenId> ids) const {
    Trace tr = trace(ids, false);
    return tr.tape.value(tr.logits);
  }

  /// Adds `weight` times the recorded parameter gradients into each
  /// Parameter's accumulator.
  void accumulate_grads(const Trace& tr, float weight = 1.0f) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& g = tr.tape.grad(tr.params[i]);
      if (g.empty()) continue;
      auto& acc = params_[i].grad;
      if (acc.empty()) acc.assign(g.size(), 0.0f);
      for (std::size_t j = 0; j < g.size(); ++j) acc[j] += weight * g[j];
    }
  }

  void zero_grads() {
    for (auto& p : params_) p.grad.clear();
  }

  // Checkpoint layout (all integers 4-byte little-endian):
  //   "ULDC" | version | tensors...
  // tensor: name length | UTF-8 name | rank | dims... | float32 LE data.
  // The first tensor, "config", holds the ModelConfig as 7 floats
  // (vocab, context, d_model, heads, layers, seed >> 16, seed & 0xffff).
  [[nodiscard]] std::vector<std::uint8_t> serialize() const {
    std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
    put_u32(out, kCheckpointVersion);
    const std::vector<float> c = {static_cast<float>(cfg_.vocab_size),
                                  static_cast<float>(cfg_.context_len),
                                  static_cast<float>(cfg_.d_model),
                                  static_cast<float>(cfg_.n_heads),
                                  static_cast<float>(cfg_.n_layers),
                                  static_cast<float>(cfg_.seed >> 16),
                                  static_cast<float>(cfg_.seed & 0xffffu)};
    put_tensor(out, "config", {c.size()}, c);
    for (const auto& p : params_) put_tensor(out, p.name, p.value.shape, p.value.data);
    return out;
  }

  static TinyCausalLM deserialize(std::span<const std::uint8_t> bytes) {
    Reader r{bytes};
    const auto magic = r.take(4, "magic");
    if (!std::equal(magic.begin(), magic.end(), std::begin(kCheckpointMagic))) {
      throw FormatError("checkpoint field 'magic': expected ULDC");
    }
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion) {
      throw FormatError("checkpoint field 'version': unsupported version " + std::to_string(version));
    }
    auto [cname, cshape, cdata] = r.tensor();
    if (cname != "config" || cshape != ad::Shape{7}) {
      throw FormatError("checkpoint field 'config': missing or malformed model configuration");
    }
    ModelConfig cfg;
    cfg.vocab_size = static_cast<std::size_t>(cdata[0]);
    cfg.context_len = static_cast<std::size_t>(cdata[1]);
    cfg.d_model = static_cast<std::size_t>(cdata[2]);
    cfg.n_heads = static_cast<std::size_t>(cdata[3]);
    cfg.n_layers = static_cast<std::size_t>(cdata[4]);
    cfg.seed = (static_cast<std::uint32_t>(cdata[5]) << 16) | static_cast<std::uint32_t>(cdata[6]);
    try {
      cfg.validate();
    } catch (const ParameterError& e) {
      throw FormatError(std::string("checkpoint field 'config': ") + e.what());
    }
    TinyCausalLM m;
    m.cfg_ = cfg;
    m.declare();
    for (auto& p : m.params_) {
      auto [name, shape, data] = r.tensor();
      if (name != p.name) {
        throw FormatError("checkpoint tensor '" + name + "' found where '" + p.name + "' was expected");
      }
      if (shape != p.value.shape) {
        throw FormatError("checkpoint tensor '" + name + "' has shape " + ad::shape_str(shape) +
                          ", expected " + ad::shape_str(p.value.shape));
      }
      p.value.data = std::move(data);
    }
    if (!r.at_end()) throw FormatError("checkpoint has trailing bytes after the last tensor");
    return m;
  }

  void save(const std::filesystem::path& path) const {
    const auto bytes = serialize();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }

  static TinyCausalLM load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot read checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
  }

 private:
  static constexpr std::size_t kPerLayer = 8;

  void declare() {
    const std::size_t d = cfg_.d_model;
    params_.clear();
    auto add = [&](std::string name, ad::Shape shape) {
      params_.push_back({std::move(name), ad::Tensor<float>(std::move(shape)), {}, {}, {}});
    };
    add("tok_emb", {cfg_.vocab_size, d});
    add("pos_emb", {cfg_.context_len, d});
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      const std::string pre = "blocks." + std::to_string(l) + ".";
      add(pre + "attn_norm", {d});
      add(pre + "wq", {d, d});
      add(pre + "wk", {d, d});
      add(pre + "wv", {d, d});
      add(pre + "wo", {d, d});
      add(pre + "ff_norm", {d});
      add(pre + "ff_in", {d, 4 * d});
      add(pre + "ff_out", {4 * d, d});
    }
    add("final_norm", {d});
  }

  static void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  static void put_tensor(std::vector<std::uint8_t>& out, const std::string& name,
                         const ad::Shape& shape, const std::vector<float>& data) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (float f : data) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(out, bits);
    }
  }

  struct Reader {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;

    std::span<const std::uint8_t> take(std::size_t n, const std::string& field) {
      if (pos + n > bytes.size()) throw FormatError("checkpoint truncated while reading '" + field + "'");
      auto s = bytes.subspan(pos, n);
      pos += n;
      return s;
    }
    std::uint32_t u32(const std::string& field) {
      const auto s = take(4, field);
      return static_cast<std::uint32_t>(s[0]) | (static_cast<std::uint32_t>(s[1]) << 8) |
             (static_cast<std::uint32_t>(s[2]) << 16) | (static_cast<std::uint32_t>(s[3]) << 24);
    }
    [[nodiscard]] bool at_end() const { return pos == bytes.size(); }

    std::tuple<std::string, ad::Shape, std::vector<float>> tensor() {
      const std::uint32_t len = u32("tensor name length");
      if (len > 4096) throw FormatError("checkpoint field 'tensor name length' is implausible");
      const auto raw = take(len, "tensor name");
      std::string name(raw.begin(), raw.end());
      const std::uint32_t rank = u32(name + " rank");
      if (rank > 8) throw FormatError("checkpoint tensor '" + name + "' has implausible rank");
      ad::Shape shape;
      std::size_t count = 1;
      for (std::uint32_t i = 0; i < rank; ++i) {
        shape.push_back(u32(name + " dims"));
        count *= shape.back();
      }
      if (count > (bytes.size() - pos) / 4) {
        throw FormatError("checkpoint truncated while reading '" + name + " data'");
      }
      std::vector<float> data(count);
      for (auto& f : data) {
        const std::uint32_t bits = u32(name + " data");
        std::memcpy(&f, &bits, 4);
      }
      return {std::move(name), std::move(shape), std::move(data)};
    }
  };

  ModelConfig cfg_;
  std::vector<Parameter> params_;
};

/// Adam with bias correction and global-norm gradient clipping.
struct Adam {
  float beta1 = 0.9f;
  float beta2 = 0.99f;
  float eps = 1e-8f;
  float clip_norm = 1.0f;
  std::uint64_t steps = 0;

  void step(TinyCausalLM& model, float lr) {
    ++steps;
    double sq = 0.0;
    for (const auto& p : model.parameters()) {
      for (float g : p.grad) sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(sq);
    const float clip = (clip_norm > 0.0f && norm > clip_norm) ? static_cast<float>(clip_norm / norm) : 1.0f;
    const float bc1 = 1.0f - static_cast<float>(std::pow(beta1, static_cast<double>(steps)));
    const float bc2 = 1.0f - static_cast<float>(std::pow(beta2, static_cast<double>(steps)));
    for (auto& p : model.parameters()) {
      if (p.grad.empty()) continue;
      if (p.adam_m.empty()) {
        p.adam_m.assign(p.grad.size(), 0.0f);
        p.adam_v.assign(p.grad.size(), 0.0f);
      }
      for (std::size_t i = 0; i < p.grad.size(); ++i) {
        const float g = p.grad[i] * clip;
        p.adam_m[i] = beta1 * p.adam_m[i] + (1.0f - beta1) * g;
        p.adam_v[i] = beta2 * p.adam_v[i] + (1.0f - beta2) * g * g;
        const float mhat = p.adam_m[i] / bc1;
        const float vhat = p.adam_v[i] / bc2;
        p.value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
    model.zero_grads();
  }
};

/// Index of the largest entry; ties go to the lowest index.
template <typename T>
std::size_t argmax(std::span<const T> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Appends argmax tokens until the end token, `max_new` tokens, or the
/// context limit. The end token itself is not appended.
inline TokenSequence greedy_generate(const TinyCausalLM& model, const TokenSequence& prompt,
                                     std::size_t max_new) {
  TokenSequence out = prompt;
  const std::size_t ctx = model.config().context_len;
  const std::size_t vocab = model.config().vocab_size;
  for (std::size_t step = 0; step < max_new && out.ids.size() < ctx; ++step) {
    const auto logits = model.forward(out.ids);
    const std::size_t last = logits.rows() - 1;
    const auto row = std::span<const float>(logits.data).subspan(last * vocab, vocab);
    const auto next = static_cast<TokenId>(argmax(row));
    if (next == Vocabulary::kEos) break;
    out.ids.push_back(next);
  }
  return out;
}

}  // namespace uld
