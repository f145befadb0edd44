#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "gv/head.hpp"
#include "gv/tensor.hpp"
#include "gv/transformer.hpp"

// Analytic memory/FLOP model of the vocabulary layer and the measured
// counterparts (element meter, tokens per second).
namespace gv::perf {

// Bytes of the [b, s, v] logits tensor. Overflow throws.
std::uint64_t logits_bytes(std::uint64_t b, std::uint64_t s, std::uint64_t v,
                           std::uint64_t dtype_bytes);

// Bytes of the [b, s, S] and [b, s, G] tensors the grouped head builds.
std::uint64_t grouped_activation_bytes(std::uint64_t b, std::uint64_t s, std::uint64_t group_size,
                                       std::uint64_t groups, std::uint64_t dtype_bytes);

// Per-token forward FLOPs, multiply-add = 2, bias/scale/shift = 1 each,
// softmax excluded.
std::uint64_t head_flops_dense(std::uint64_t d, std::uint64_t v);
std::uint64_t head_flops_grouped(std::uint64_t d, std::uint64_t group_size, std::uint64_t groups);

struct Environment {
  std::string dtype;
  std::size_t workers = 1;
  std::string hardware;
};

Environment describe_environment(Precision precision);

struct CostReport {
  std::uint64_t batch = 0;
  std::uint64_t seq = 0;
  std::uint64_t vocab = 0;
  std::uint64_t d = 0;
  std::uint64_t group_size = 0;
  std::uint64_t groups = 0;
  std::uint64_t dtype_bytes = 4;
  std::uint64_t logits_bytes = 0;
  std::uint64_t grouped_bytes = 0;
  std::uint64_t head_flops_dense = 0;
  std::uint64_t head_flops_grouped = 0;
  std::int64_t measured_peak_dense = -1;  // -1: not measured
  std::int64_t measured_peak_grouped = -1;
  double tokens_per_second_dense = 0;
  double tokens_per_second_grouped = 0;
  Environment env;
};

// Fills the analytic fields for (b, s, v, d) with the given group size
// (0: ceil(sqrt(v))).
CostReport analytic_report(std::uint64_t b, std::uint64_t s, std::uint64_t v, std::uint64_t d,
                           std::uint64_t group_size, Precision precision);

std::string cost_csv_header();
void write_cost_csv(std::ostream& out, std::span<const CostReport> reports);
void write_cost_table(std::ostream& out, const CostReport& report);

// Peak live elements allocated while computing the head's training loss and
// its backward pass for random hidden states [b*s x d] and random labels.
// Hidden states and head weights exist before metering starts.
template <class T>
std::int64_t measure_head_peak(HeadKind kind, std::size_t b, std::size_t s, std::size_t v,
                               std::size_t d, std::size_t group_size, std::uint64_t seed);

struct ThroughputOptions {
  std::size_t batch = 2;
  std::size_t trials = 5;
  std::size_t warmup = 1;
  std::uint64_t seed = 0;
};

struct ThroughputResult {
  HeadKind kind;
  std::size_t d;
  std::size_t vocab;
  double tokens_per_second;  // median over trials
  std::vector<double> trials;
};

// Times forward + loss + backward of the whole model on synthetic batches of
// seq_len tokens.
template <class T>
ThroughputResult throughput_bench(const LmConfig& config, const ThroughputOptions& options);

}  // namespace gv::perf
