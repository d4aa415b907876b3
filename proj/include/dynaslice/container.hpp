#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "dynaslice/io.hpp"
#include "dynaslice/model.hpp"

namespace dynaslice {

static_assert(std::endian::native == std::endian::little,
              "container blobs are little-endian; big-endian hosts unsupported");

// On-disk model format: a JSON manifest (<name>.json) listing named tensors
// with shapes and byte offsets, next to a blob (<name>.bin) of f32
// little-endian row-major values concatenated in table order.

namespace detail {

struct TensorEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;  // bytes into the blob

  std::size_t element_count() const {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    return n;
  }
};

class ContainerWriter {
 public:
  void add(const std::string& name, std::vector<std::size_t> shape,
           const std::vector<double>& values) {
    TensorEntry e;
    e.name = name;
    e.shape = std::move(shape);
    e.offset = blob_.size();
    if (e.element_count() != values.size())
      throw precondition_error("container: tensor " + name +
                               " shape does not cover its data");
    for (double v : values) {
      const float f = static_cast<float>(v);
      const char* p = reinterpret_cast<const char*>(&f);
      blob_.append(p, p + sizeof(float));
    }
    entries_.push_back(std::move(e));
  }

  void add(const std::string& name, const Matrix& m) {
    add(name, {m.rows, m.cols}, m.data);
  }

  void add(const std::string& name, const Vec& v) {
    add(name, {v.size()}, v);
  }

  // Writes <base>.json and <base>.bin. `manifest` must already carry kind,
  // config and any provenance; the tensor table and blob name are filled in.
  void write(const std::string& base_path, nlohmann::json manifest) const {
    nlohmann::json table = nlohmann::json::array();
    for (const TensorEntry& e : entries_) {
      table.push_back({{"name", e.name},
                       {"dtype", "f32"},
                       {"shape", e.shape},
                       {"offset", e.offset}});
    }
    manifest["format_version"] = 1;
    manifest["tensors"] = table;
    const std::string blob_name =
        std::filesystem::path(base_path + ".bin").filename().string();
    manifest["blob"] = blob_name;
    write_file(base_path + ".bin", blob_);
    write_file(base_path + ".json", manifest.dump(2) + "\n");
  }

 private:
  std::vector<TensorEntry> entries_;
  std::string blob_;
};

class ContainerReader {
 public:
  explicit ContainerReader(const std::string& manifest_path) {
    nlohmann::json manifest;
    try {
      manifest = nlohmann::json::parse(read_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
      throw format_error("manifest " + manifest_path + ": " + e.what());
    }
    if (!manifest.contains("format_version") ||
        manifest["format_version"].get<int>() != 1)
      throw format_error("manifest " + manifest_path +
                         ": unsupported format_version");
    manifest_ = manifest;

    const std::string blob_name = manifest.value("blob", "");
    if (blob_name.empty())
      throw format_error("manifest " + manifest_path + ": missing blob field");
    const auto blob_path =
        std::filesystem::path(manifest_path).parent_path() / blob_name;
    blob_ = read_file(blob_path.string());

    if (!manifest.contains("tensors"))
      throw format_error("manifest " + manifest_path + ": missing tensor table");
    for (const auto& t : manifest["tensors"]) {
      TensorEntry e;
      e.name = t.at("name").get<std::string>();
      if (t.value("dtype", "f32") != "f32")
        throw format_error("tensor " + e.name + ": unsupported dtype");
      e.shape = t.at("shape").get<std::vector<std::size_t>>();
      e.offset = t.at("offset").get<std::size_t>();
      if (entries_.count(e.name))
        throw format_error("tensor " + e.name + ": duplicated in manifest");
      const std::size_t end = e.offset + e.element_count() * sizeof(float);
      if (end > blob_.size())
        throw format_error("tensor " + e.name + ": blob truncated (needs " +
                           std::to_string(end) + " bytes, blob has " +
                           std::to_string(blob_.size()) + ")");
      for (const auto& [name, other] : entries_) {
        const std::size_t other_end =
            other.offset + other.element_count() * sizeof(float);
        if (e.offset < other_end && other.offset < end)
          throw format_error("tensor " + e.name + ": overlaps tensor " + name);
      }
      entries_[e.name] = e;
    }
  }

  const nlohmann::json& manifest() const { return manifest_; }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [name, e] : entries_) out.push_back(name);
    return out;
  }

  Matrix read_matrix(const std::string& name, std::size_t rows,
                     std::size_t cols) const {
    const TensorEntry& e = find(name);
    if (e.shape.size() != 2 || e.shape[0] != rows || e.shape[1] != cols)
      throw format_error("tensor " + name + ": expected shape " +
                         std::to_string(rows) + "x" + std::to_string(cols));
    Matrix m(rows, cols);
    copy_values(e, m.data);
    return m;
  }

  Vec read_vector(const std::string& name, std::size_t size) const {
    const TensorEntry& e = find(name);
    if (e.shape.size() != 1 || e.shape[0] != size)
      throw format_error("tensor " + name + ": expected shape " +
                         std::to_string(size));
    Vec v(size);
    copy_values(e, v);
    return v;
  }

 private:
  const TensorEntry& find(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end())
      throw format_error("tensor " + name + ": missing from container");
    return it->second;
  }

  void copy_values(const TensorEntry& e, std::vector<double>& out) const {
    const char* src = blob_.data() + e.offset;
    for (std::size_t i = 0; i < out.size(); ++i) {
      float f;
      std::memcpy(&f, src + i * sizeof(float), sizeof(float));
      if (!std::isfinite(f))
        throw format_error("tensor " + e.name + ": non-finite value at index " +
                           std::to_string(i));
      out[i] = static_cast<double>(f);
    }
  }

  nlohmann::json manifest_;
  std::string blob_;
  std::map<std::string, TensorEntry> entries_;
};

inline std::string block_tensor(std::size_t i, const char* field) {
  return "blocks." + std::to_string(i) + "." + field;
}

inline nlohmann::json config_json(const ModelConfig& cfg) {
  return {{"n_layers", cfg.n_layers},   {"d_model", cfg.d_model},
          {"n_heads", cfg.n_heads},     {"d_ff", cfg.d_ff},
          {"vocab_size", cfg.vocab_size}, {"max_seq", cfg.max_seq}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  try {
    cfg.n_layers = j.at("n_layers").get<std::size_t>();
    cfg.d_model = j.at("d_model").get<std::size_t>();
    cfg.n_heads = j.at("n_heads").get<std::size_t>();
    cfg.d_ff = j.at("d_ff").get<std::size_t>();
    cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
    cfg.max_seq = j.at("max_seq").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("manifest config: ") + e.what());
  }
  return cfg;
}

}  // namespace detail

// Writes <base_path>.json + <base_path>.bin.
inline void save_model(const TransformerModel& model, const std::string& base_path,
                       nlohmann::json provenance = nlohmann::json::object()) {
  detail::ContainerWriter w;
  w.add("token_embedding", model.token_embedding);
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    const BlockWeights& blk = model.blocks[i];
    w.add(detail::block_tensor(i, "attn_norm_gain"), blk.attn_norm_gain);
    w.add(detail::block_tensor(i, "w_q"), blk.w_q);
    w.add(detail::block_tensor(i, "w_k"), blk.w_k);
    w.add(detail::block_tensor(i, "w_v"), blk.w_v);
    w.add(detail::block_tensor(i, "w_o"), blk.w_o);
    w.add(detail::block_tensor(i, "mlp_norm_gain"), blk.mlp_norm_gain);
    w.add(detail::block_tensor(i, "w_up"), blk.w_up);
    w.add(detail::block_tensor(i, "w_down"), blk.w_down);
  }
  w.add("final_norm_gain", model.final_norm_gain);
  w.add("lm_head", model.lm_head);

  nlohmann::json manifest;
  manifest["kind"] = "dense";
  manifest["config"] = detail::config_json(model.config);
  if (!provenance.empty()) manifest["provenance"] = provenance;
  w.write(base_path, manifest);
}

inline TransformerModel load_model(const std::string& manifest_path) {
  detail::ContainerReader r(manifest_path);
  if (r.manifest().value("kind", "dense") != "dense")
    throw format_error("load_model: container kind is not dense (" +
                       r.manifest().value("kind", "?") + ")");
  const ModelConfig cfg = detail::config_from_json(r.manifest().at("config"));
  cfg.validate();

  TransformerModel m;
  m.config = cfg;
  m.token_embedding = r.read_matrix("token_embedding", cfg.vocab_size, cfg.d_model);
  m.blocks.resize(cfg.n_layers);
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    BlockWeights& blk = m.blocks[i];
    blk.attn_norm_gain = r.read_vector(detail::block_tensor(i, "attn_norm_gain"), cfg.d_model);
    blk.w_q = r.read_matrix(detail::block_tensor(i, "w_q"), cfg.d_model, cfg.d_model);
    blk.w_k = r.read_matrix(detail::block_tensor(i, "w_k"), cfg.d_model, cfg.d_model);
    blk.w_v = r.read_matrix(detail::block_tensor(i, "w_v"), cfg.d_model, cfg.d_model);
    blk.w_o = r.read_matrix(detail::block_tensor(i, "w_o"), cfg.d_model, cfg.d_model);
    blk.mlp_norm_gain = r.read_vector(detail::block_tensor(i, "mlp_norm_gain"), cfg.d_model);
    blk.w_up = r.read_matrix(detail::block_tensor(i, "w_up"), cfg.d_model, cfg.d_ff);
    blk.w_down = r.read_matrix(detail::block_tensor(i, "w_down"), cfg.d_ff, cfg.d_model);
  }
  m.final_norm_gain = r.read_vector("final_norm_gain", cfg.d_model);
  m.lm_head = r.read_matrix("lm_head", cfg.d_model, cfg.vocab_size);
  return m;
}

}  // namespace dynaslice
