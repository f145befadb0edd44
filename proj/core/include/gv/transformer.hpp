#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gv/grouping.hpp"
#include "gv/head.hpp"
#include "gv/tensor.hpp"

namespace gv {

struct LmConfig {
  std::size_t d = 64;
  std::size_t layers = 4;
  std::size_t heads = 2;
  std::size_t seq_len = 256;
  std::size_t vocab = 1024;
  HeadKind head = HeadKind::grouped;
  std::size_t group_size = 0;  // 0: ceil(sqrt(vocab))

  void validate() const;
  // Partition the grouped head uses (also meaningful for reporting).
  GroupPartition partition() const;
};

// GPT-2 style decoder body: token + learned position embeddings, pre-norm
// blocks of causal self-attention and a GELU MLP of width 4d, final layer
// norm. Produces hidden states; the output head is owned separately so the
// two can be swapped without touching the body.
template <class T>
class TransformerLM {
 public:
  // Body and head draw from independent streams derived from `seed`, so the
  // body initialisation does not depend on the head kind.
  TransformerLM(LmConfig config, std::uint64_t seed);

  const LmConfig& config() const noexcept { return config_; }

  // tokens holds batch*seq ids, row-major. Returns hidden states
  // [batch*seq x d]. With zero layers this is exactly token + position
  // embedding (the final norm belongs to the block stack).
  Tensor<T> hidden(std::span<const Index> tokens, std::size_t batch, std::size_t seq) const;
  // Same values as hidden(), shaped [batch x seq x d].
  Tensor<T> forward(std::span<const Index> tokens, std::size_t batch, std::size_t seq) const;

  OutputHead<T>& head() noexcept { return *head_; }
  const OutputHead<T>& head() const noexcept { return *head_; }

  std::vector<NamedTensor<T>> body_parameters() const;
  // Body followed by head parameters.
  std::vector<NamedTensor<T>> parameters() const;
  std::size_t parameter_count() const;

 private:
  struct Block {
    Tensor<T> ln1_gamma, ln1_beta;
    Tensor<T> qkv_weight, qkv_bias;
    Tensor<T> proj_weight, proj_bias;
    Tensor<T> ln2_gamma, ln2_beta;
    Tensor<T> fc_weight, fc_bias;
    Tensor<T> out_weight, out_bias;
  };

  LmConfig config_;
  Tensor<T> token_embedding_;     // [v x d]
  Tensor<T> position_embedding_;  // [seq_len x d]
  std::vector<Block> blocks_;
  Tensor<T> lnf_gamma_, lnf_beta_;
  std::unique_ptr<OutputHead<T>> head_;
};

extern template class TransformerLM<float>;
extern template class TransformerLM<double>;

}  // namespace gv
