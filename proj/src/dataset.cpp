#include "gca/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gca/netpbm.hpp"
#include "gca/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace gca {

namespace {

std::string id_name(Index id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04lld", static_cast<long long>(id));
  return buf;
}

std::vector<Index> ids_from(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_array()) fail("split.json missing array '", key, "'");
  std::vector<Index> out;
  for (const auto& v : j[key]) {
    if (!v.is_number_integer()) fail("split.json '", key, "' holds a non-integer id");
    out.push_back(v.get<Index>());
  }
  return out;
}

}  // namespace

DatasetSplit make_split(Index count, std::uint64_t seed) {
  if (count < 3) fail("need at least 3 samples to split, got ", count);
  std::vector<Index> ids(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) ids[static_cast<std::size_t>(i)] = i;
  Rng rng = Rng::derive(seed, rng_stream::kShuffle);
  rng.shuffle(ids);
  Index n_train = Index(0.7 * double(count));
  Index n_val = Index(0.15 * double(count));
  if (n_train < 1) n_train = 1;
  if (n_val < 1) n_val = 1;
  DatasetSplit sp;
  sp.train.assign(ids.begin(), ids.begin() + n_train);
  sp.val.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
  sp.test.assign(ids.begin() + n_train + n_val, ids.end());
  return sp;
}

void save_dataset(const std::string& dir, const std::vector<SegSample>& samples,
                  const DatasetSplit& split, Index num_classes) {
  if (samples.empty()) fail("refusing to save an empty dataset");
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SegSample& s = samples[i];
    const char* ext = s.image.shape.c == 3 ? ".ppm" : ".pgm";
    save_pnm((fs::path(dir) / "images" / (id_name(Index(i)) + ext)).string(), to_pnm(s.image));
    save_pnm((fs::path(dir) / "masks" / (id_name(Index(i)) + ".pgm")).string(), to_pnm(s.mask));
  }
  json j;
  j["num_classes"] = num_classes;
  j["train"] = split.train;
  j["val"] = split.val;
  j["test"] = split.test;
  std::ofstream out(fs::path(dir) / "split.json");
  if (!out) fail("cannot write split.json under ", dir);
  out << j.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "split.json");
  if (!in) fail("no split.json under ", dir);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail("split.json: ", e.what());
  }
  Dataset ds;
  if (!j.contains("num_classes") || !j["num_classes"].is_number_integer())
    fail("split.json missing integer 'num_classes'");
  ds.num_classes = j["num_classes"].get<Index>();
  ds.split.train = ids_from(j, "train");
  ds.split.val = ids_from(j, "val");
  ds.split.test = ids_from(j, "test");

  std::vector<Index> all;
  for (const auto* part : {&ds.split.train, &ds.split.val, &ds.split.test})
    all.insert(all.end(), part->begin(), part->end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i)
    if (all[i] != Index(i)) fail("split ids must cover 0..N-1 exactly once; missing or duplicate near ", all[i]);

  ds.samples.resize(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    fs::path pgm = fs::path(dir) / "images" / (id_name(Index(i)) + ".pgm");
    fs::path ppm = fs::path(dir) / "images" / (id_name(Index(i)) + ".ppm");
    fs::path img = fs::exists(pgm) ? pgm : ppm;
    SegSample s;
    s.image = from_pnm(load_pnm(img.string()));
    s.mask = from_pnm(load_pnm((fs::path(dir) / "masks" / (id_name(Index(i)) + ".pgm")).string()));
    if (s.mask.shape.c != 1) fail("mask ", i, " is not single-channel");
    for (float v : s.mask.data)
      if (v < 0.0f || v >= float(ds.num_classes))
        fail("mask ", i, " holds id ", v, " outside [0,", ds.num_classes, ")");
    ds.samples[i] = std::move(s);
  }
  return ds;
}

}  // namespace gca
