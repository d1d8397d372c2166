#include "gca/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "model_json.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; this port needs byte swaps");

namespace gca {

namespace {

constexpr char kMagic[] = "GCACKPT1\n";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

double meta_number(const ordered_json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!j[key].is_number()) fail("checkpoint manifest: '", key, "' is not a number");
  return j[key].get<double>();
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamRegistry<float>& reg,
                     const CheckpointMeta& meta) {
  ordered_json manifest;
  manifest["model"] = model_config_to_json(meta.model);
  manifest["val_loss"] = meta.val_loss;  // NaN serializes as null
  manifest["val_mdsc"] = meta.val_mdsc;
  manifest["epoch"] = meta.epoch;

  ordered_json tensors = ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& e : reg.entries()) {
    ordered_json t;
    t["name"] = e.name;
    t["shape"] = {e.tensor->shape.b, e.tensor->shape.c, e.tensor->shape.h, e.tensor->shape.w};
    t["dtype"] = "f32";
    t["byte_offset"] = offset;
    tensors.push_back(std::move(t));
    offset += std::uint64_t(e.tensor->numel()) * sizeof(float);
  }
  manifest["tensors"] = std::move(tensors);

  std::string text = manifest.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write checkpoint ", path);
  out.write(kMagic, std::streamsize(kMagicLen));
  std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), std::streamsize(text.size()));
  for (const auto& e : reg.entries())
    out.write(reinterpret_cast<const char*>(e.tensor->ptr()),
              std::streamsize(std::size_t(e.tensor->numel()) * sizeof(float)));
  if (!out) fail("short write on checkpoint ", path);
}

namespace {

ordered_json read_manifest(std::ifstream& in, const std::string& path) {
  char magic[kMagicLen];
  if (!in.read(magic, std::streamsize(kMagicLen)) || std::memcmp(magic, kMagic, kMagicLen) != 0)
    fail("not a checkpoint file: ", path);
  std::uint64_t len = 0;
  if (!in.read(reinterpret_cast<char*>(&len), sizeof len))
    fail("truncated checkpoint header: ", path);
  std::string text(len, '\0');
  if (!in.read(text.data(), std::streamsize(len))) fail("truncated checkpoint manifest: ", path);
  try {
    return ordered_json::parse(text);
  } catch (const ordered_json::exception& e) {
    fail("checkpoint manifest: ", e.what());
  }
}

CheckpointMeta meta_from(const ordered_json& manifest) {
  CheckpointMeta meta;
  std::vector<std::string> errors;
  if (!manifest.contains("model")) fail("checkpoint manifest has no model section");
  model_config_from_json(manifest["model"], meta.model, "model", errors);
  if (!errors.empty()) {
    std::string all;
    for (const auto& e : errors) all += "\n  " + e;
    fail("checkpoint manifest:", all);
  }
  meta.val_loss = meta_number(manifest, "val_loss");
  meta.val_mdsc = meta_number(manifest, "val_mdsc");
  if (manifest.contains("epoch")) meta.epoch = manifest["epoch"].get<Index>();
  return meta;
}

}  // namespace

CheckpointMeta peek_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open checkpoint ", path);
  return meta_from(read_manifest(in, path));
}

CheckpointMeta load_checkpoint(const std::string& path, ParamRegistry<float>& reg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open checkpoint ", path);
  ordered_json manifest = read_manifest(in, path);
  CheckpointMeta meta = meta_from(manifest);

  if (!manifest.contains("tensors") || !manifest["tensors"].is_array())
    fail("checkpoint manifest has no tensor directory");
  const auto& dir = manifest["tensors"];
  const auto& entries = reg.entries();
  if (dir.size() != entries.size())
    fail("checkpoint holds ", dir.size(), " tensors, model wants ", entries.size());

  std::uint64_t expect_offset = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& t = dir[i];
    Tensor4<float>& dst = *entries[i].tensor;
    if (t.at("name").get<std::string>() != entries[i].name)
      fail("checkpoint tensor ", i, " is '", t.at("name").get<std::string>(), "', model wants '",
           entries[i].name, "'");
    auto shape = t.at("shape").get<std::vector<Index>>();
    Shape4 s = dst.shape;
    if (shape.size() != 4 || shape[0] != s.b || shape[1] != s.c || shape[2] != s.h ||
        shape[3] != s.w)
      fail("checkpoint tensor '", entries[i].name, "' shape mismatch");
    if (t.at("dtype").get<std::string>() != "f32")
      fail("checkpoint tensor '", entries[i].name, "' has unsupported dtype");
    if (t.at("byte_offset").get<std::uint64_t>() != expect_offset)
      fail("checkpoint tensor '", entries[i].name, "' offset mismatch");
    expect_offset += std::uint64_t(dst.numel()) * sizeof(float);
  }
  for (const auto& e : entries) {
    if (!in.read(reinterpret_cast<char*>(e.tensor->ptr()),
                 std::streamsize(std::size_t(e.tensor->numel()) * sizeof(float))))
      fail("truncated checkpoint blob at tensor '", e.name, "'");
  }
  char extra;
  if (in.read(&extra, 1)) fail("checkpoint has trailing bytes after the blob");
  return meta;
}

}  // namespace gca
