#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "gv/head.hpp"
#include "gv/optim.hpp"
#include "gv/tensor.hpp"

// Synthetic large-label-space classification: every combination of eight
// categorical attributes is its own class, and samples are noisy feature
// vectors built from the attribute values.
namespace gv::mc {

struct Attribute {
  const char* name;
  std::size_t options;
};

inline constexpr std::array<Attribute, 8> kAttributes{{
    {"shape", 8},
    {"pattern", 4},
    {"rotation", 6},
    {"color", 12},
    {"size", 5},
    {"texture", 2},
    {"opacity", 4},
    {"border", 2},
}};

inline constexpr std::size_t kNumAttributes = kAttributes.size();
using AttributeTuple = std::array<std::size_t, kNumAttributes>;

// 184320
std::size_t label_count();
// Sum of option counts: 43.
std::size_t feature_dim();

// Mixed radix, first attribute most significant.
std::uint64_t label_index(const AttributeTuple& tuple);
AttributeTuple decode_label(std::uint64_t label);

struct Dataset {
  std::size_t dim = 0;
  std::size_t n_labels = 0;
  double sigma = 0;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> labels;
  std::vector<double> features;  // row-major [labels.size() x dim]

  std::size_t size() const noexcept { return labels.size(); }
};

struct DatasetOptions {
  std::size_t n_labels = 10000;  // first n labels in index order
  std::size_t per_label = 5;
  double sigma = 0.3;
  std::uint64_t seed = 0;
};

// Samples are grouped by label: per_label consecutive rows for label 0, then
// label 1, ... Each label draws its noise from its own derived seed.
Dataset generate_dataset(const DatasetOptions& options);

// Attribute-specific scale applied to that attribute's one-hot block.
double signal_strength(std::size_t attribute);

void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

// Holds out sample k of every label (k = per_label - 1) for validation.
struct Split {
  Dataset train;
  Dataset val;
};
Split split_last_per_label(const Dataset& data);

struct ClassifierOptions {
  HeadKind head = HeadKind::grouped;
  std::size_t hidden = 512;
  std::size_t epochs = 10;
  std::size_t batch = 64;
  std::size_t accumulate = 4;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct EpochRow {
  std::size_t epoch;  // 1-based
  std::size_t steps;  // optimiser steps so far
  double train_loss;  // mean over the epoch's micro-batches
  double val_accuracy;
  double group_accuracy;  // grouped head only, else -1
};

struct ClassifierResult {
  std::vector<EpochRow> epochs;
  std::size_t head_parameters = 0;
  std::size_t encoder_parameters = 0;
};

// Two hidden ReLU layers of width `hidden` followed by a dense or grouped
// head with S = G = ceil(sqrt(labels)). Accuracy is the argmax of the full
// label distribution; group accuracy is the argmax of the group predictor.
template <class T>
ClassifierResult train_classifier(const Dataset& train, const Dataset& val,
                                  const ClassifierOptions& options,
                                  const std::function<void(const EpochRow&)>& on_epoch = {});

}  // namespace gv::mc
