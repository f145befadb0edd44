#include "gv/transformer.hpp"

#include <random>

#include "gv/error.hpp"
#include "gv/ops.hpp"

namespace gv {
namespace {

constexpr std::uint64_t kHeadStream = 0x9E3779B97F4A7C15ULL;

template <class T>
Tensor<T> param(Shape shape, T fill) {
  Tensor<T> t(std::move(shape), fill);
  t.set_requires_grad(true);
  return t;
}

template <class T>
Tensor<T> normal_param(Shape shape, std::mt19937_64& rng) {
  auto t = Tensor<T>::randn(std::move(shape), rng, T(0.02));
  t.set_requires_grad(true);
  return t;
}

}  // namespace

void LmConfig::validate() const {
  if (d == 0 || heads == 0 || d % heads != 0) {
    throw ConfigError("hidden size " + std::to_string(d) + " must be a positive multiple of " +
                      std::to_string(heads) + " heads");
  }
  if (seq_len < 2) throw ConfigError("seq_len must be at least 2");
  if (vocab < 1) throw ConfigError("vocabulary must not be empty");
  if (group_size > vocab) {
    throw ConfigError("group size " + std::to_string(group_size) + " exceeds vocabulary " +
                      std::to_string(vocab));
  }
}

GroupPartition LmConfig::partition() const {
  return group_size == 0 ? GroupPartition::optimal(vocab)
                         : GroupPartition::with_group_size(vocab, group_size);
}

template <class T>
TransformerLM<T>::TransformerLM(LmConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const std::size_t d = config_.d;
  std::mt19937_64 rng(seed);
  token_embedding_ = normal_param<T>({config_.vocab, d}, rng);
  position_embedding_ = normal_param<T>({config_.seq_len, d}, rng);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    Block b;
    b.ln1_gamma = param<T>({d}, T(1));
    b.ln1_beta = param<T>({d}, T(0));
    b.qkv_weight = normal_param<T>({d, 3 * d}, rng);
    b.qkv_bias = param<T>({3 * d}, T(0));
    b.proj_weight = normal_param<T>({d, d}, rng);
    b.proj_bias = param<T>({d}, T(0));
    b.ln2_gamma = param<T>({d}, T(1));
    b.ln2_beta = param<T>({d}, T(0));
    b.fc_weight = normal_param<T>({d, 4 * d}, rng);
    b.fc_bias = param<T>({4 * d}, T(0));
    b.out_weight = normal_param<T>({4 * d, d}, rng);
    b.out_bias = param<T>({d}, T(0));
    blocks_.push_back(std::move(b));
  }
  lnf_gamma_ = param<T>({d}, T(1));
  lnf_beta_ = param<T>({d}, T(0));

  std::mt19937_64 head_rng(seed ^ kHeadStream);
  head_ = make_head<T>(config_.head, d, config_.vocab, config_.group_size, head_rng);
}

template <class T>
Tensor<T> TransformerLM<T>::hidden(std::span<const Index> tokens, std::size_t batch,
                                   std::size_t seq) const {
  if (seq == 0 || seq > config_.seq_len) {
    throw InputError("sequence length " + std::to_string(seq) + " outside [1, " +
                     std::to_string(config_.seq_len) + "]");
  }
  if (tokens.size() != batch * seq) {
    throw DimensionError("expected " + std::to_string(batch * seq) + " token ids, got " +
                         std::to_string(tokens.size()));
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= config_.vocab) {
      throw IndexError("token id " + std::to_string(tokens[i]) + " at position " +
                       std::to_string(i) + " outside vocabulary of " +
                       std::to_string(config_.vocab));
    }
  }
  std::vector<Index> positions(tokens.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<Index>(i % seq);

  auto x = add(gather_rows(token_embedding_, tokens), gather_rows(position_embedding_, positions));
  if (blocks_.empty()) return x;
  for (const auto& b : blocks_) {
    auto a = layer_norm(x, b.ln1_gamma, b.ln1_beta);
    auto att = causal_attention(linear(a, b.qkv_weight, b.qkv_bias), batch, seq, config_.heads);
    x = add(x, linear(att, b.proj_weight, b.proj_bias));
    auto m = layer_norm(x, b.ln2_gamma, b.ln2_beta);
    x = add(x, linear(gelu(linear(m, b.fc_weight, b.fc_bias)), b.out_weight, b.out_bias));
  }
  return layer_norm(x, lnf_gamma_, lnf_beta_);
}

template <class T>
Tensor<T> TransformerLM<T>::forward(std::span<const Index> tokens, std::size_t batch,
                                    std::size_t seq) const {
  return reshape(hidden(tokens, batch, seq), {batch, seq, config_.d});
}

template <class T>
std::vector<NamedTensor<T>> TransformerLM<T>::body_parameters() const {
  std::vector<NamedTensor<T>> out{{"embed.token", token_embedding_},
                                  {"embed.position", position_embedding_}};
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto& b = blocks_[l];
    const std::string p = "block" + std::to_string(l) + ".";
    out.push_back({p + "ln1.gamma", b.ln1_gamma});
    out.push_back({p + "ln1.beta", b.ln1_beta});
    out.push_back({p + "attn.qkv_weight", b.qkv_weight});
    out.push_back({p + "attn.qkv_bias", b.qkv_bias});
    out.push_back({p + "attn.proj_weight", b.proj_weight});
    out.push_back({p + "attn.proj_bias", b.proj_bias});
    out.push_back({p + "ln2.gamma", b.ln2_gamma});
    out.push_back({p + "ln2.beta", b.ln2_beta});
    out.push_back({p + "mlp.fc_weight", b.fc_weight});
    out.push_back({p + "mlp.fc_bias", b.fc_bias});
    out.push_back({p + "mlp.out_weight", b.out_weight});
    out.push_back({p + "mlp.out_bias", b.out_bias});
  }
  out.push_back({"final_ln.gamma", lnf_gamma_});
  out.push_back({"final_ln.beta", lnf_beta_});
  return out;
}

template <class T>
std::vector<NamedTensor<T>> TransformerLM<T>::parameters() const {
  auto out = body_parameters();
  for (auto& p : head_->parameters()) out.push_back(std::move(p));
  return out;
}

template <class T>
std::size_t TransformerLM<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

template class TransformerLM<float>;
template class TransformerLM<double>;

}  // namespace gv
