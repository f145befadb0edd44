#include "gv/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "gv/error.hpp"
#include "gv/run_config.hpp"
#include "gv/serialize.hpp"

namespace gv {
namespace {

template <class V>
std::string str(const V& v) {
  if constexpr (std::is_floating_point_v<V>) {
    return format_double(v);
  } else {
    std::ostringstream os;
    os << v;
    return os.str();
  }
}

std::size_t as_size(const std::vector<KeyValue>& kv, const std::string& key) {
  const auto& v = require_value(kv, key);
  try {
    return static_cast<std::size_t>(std::stoull(v));
  } catch (const std::exception&) {
    throw ConfigError("checkpoint manifest: '" + key + "' is not an integer: " + v);
  }
}

double as_double(const std::vector<KeyValue>& kv, const std::string& key) {
  const auto& v = require_value(kv, key);
  try {
    return std::stod(v);
  } catch (const std::exception&) {
    throw ConfigError("checkpoint manifest: '" + key + "' is not a number: " + v);
  }
}

}  // namespace

std::vector<KeyValue> read_checkpoint_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.txt";
  if (!std::filesystem::exists(path)) throw ConfigError("missing checkpoint manifest " + path.string());
  auto kv = read_key_value_file(path);
  if (require_value(kv, "format") != "gvlm-v1") {
    throw ConfigError("unsupported checkpoint format in " + path.string());
  }
  return kv;
}

LmConfig config_from_manifest(const std::vector<KeyValue>& kv) {
  LmConfig c;
  c.d = as_size(kv, "d");
  c.layers = as_size(kv, "layers");
  c.heads = as_size(kv, "heads");
  c.seq_len = as_size(kv, "seq_len");
  c.vocab = as_size(kv, "vocab");
  c.head = parse_head_kind(require_value(kv, "head"));
  c.group_size = as_size(kv, "group_size");
  c.validate();
  return c;
}

template <class T>
void save_checkpoint(const std::filesystem::path& dir, const TransformerLM<T>& model,
                     const CheckpointMeta& meta) {
  std::filesystem::create_directories(dir);
  const auto& c = model.config();
  const auto partition = c.partition();
  std::vector<KeyValue> kv{
      {"format", "gvlm-v1"},
      {"d", str(c.d)},
      {"layers", str(c.layers)},
      {"heads", str(c.heads)},
      {"seq_len", str(c.seq_len)},
      {"vocab", str(c.vocab)},
      {"head", to_string(c.head)},
      {"group_size", str(c.head == HeadKind::grouped ? partition.group_size() : 0)},
      {"num_groups", str(c.head == HeadKind::grouped ? partition.num_groups() : 0)},
      {"dtype", to_string(precision_of<T>())},
      {"step", str(meta.step)},
      {"seed", str(meta.seed)},
      {"optimizer", "adam"},
      {"lr", str(meta.adam.lr)},
      {"beta1", str(meta.adam.beta1)},
      {"beta2", str(meta.adam.beta2)},
      {"eps", str(meta.adam.eps)},
      {"clip_norm", str(meta.adam.clip_norm)},
      {"id_order", meta.id_order},
  };
  write_key_value_file(dir / "manifest.txt", kv);
  std::ofstream(dir / "head.manifest") << model.head().manifest() << '\n';
  save_tensors(dir, model.parameters());
}

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& dir) {
  const auto kv = read_checkpoint_manifest(dir);
  LoadedCheckpoint<T> out;
  auto config = config_from_manifest(kv);
  out.meta.step = as_size(kv, "step");
  out.meta.seed = as_size(kv, "seed");
  out.meta.adam.lr = as_double(kv, "lr");
  out.meta.adam.beta1 = as_double(kv, "beta1");
  out.meta.adam.beta2 = as_double(kv, "beta2");
  out.meta.adam.eps = as_double(kv, "eps");
  out.meta.adam.clip_norm = as_double(kv, "clip_norm");
  out.meta.id_order = require_value(kv, "id_order");
  out.stored_precision = parse_precision(require_value(kv, "dtype"));
  out.model = std::make_unique<TransformerLM<T>>(config, out.meta.seed);

  std::ifstream head_manifest(dir / "head.manifest");
  std::string line;
  if (!head_manifest || !std::getline(head_manifest, line) ||
      line != out.model->head().manifest()) {
    throw ConfigError("head manifest in " + dir.string() + " does not match the model config");
  }
  auto params = out.model->parameters();
  load_tensors_into(dir, params);
  return out;
}

template void save_checkpoint<float>(const std::filesystem::path&, const TransformerLM<float>&,
                                     const CheckpointMeta&);
template void save_checkpoint<double>(const std::filesystem::path&, const TransformerLM<double>&,
                                      const CheckpointMeta&);
template LoadedCheckpoint<float> load_checkpoint<float>(const std::filesystem::path&);
template LoadedCheckpoint<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace gv
