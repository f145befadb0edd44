#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "gv/optim.hpp"
#include "gv/run_config.hpp"
#include "gv/transformer.hpp"

namespace gv {

struct CheckpointMeta {
  std::size_t step = 0;
  std::uint64_t seed = 0;
  AdamOptions adam{};
  std::string id_order = "bpe";  // "bpe" or "raw"
};

template <class T>
struct LoadedCheckpoint {
  std::unique_ptr<TransformerLM<T>> model;
  CheckpointMeta meta;
  Precision stored_precision;
};

// Writes `manifest.txt` (config echo, step, seed, optimiser settings),
// `head.manifest`, and one GVT1 file per named parameter.
template <class T>
void save_checkpoint(const std::filesystem::path& dir, const TransformerLM<T>& model,
                     const CheckpointMeta& meta);

// Loads into precision T regardless of the stored precision.
template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& dir);

// Reads only the manifest, e.g. to pick the precision before loading.
std::vector<KeyValue> read_checkpoint_manifest(const std::filesystem::path& dir);
LmConfig config_from_manifest(const std::vector<KeyValue>& manifest);

}  // namespace gv
