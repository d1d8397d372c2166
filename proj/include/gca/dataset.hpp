#pragma once
// On-disk dataset layout and the train/val/test split. A dataset directory
// holds images/NNNN.pgm|ppm, masks/NNNN.pgm and a split.json naming the ids
// in each partition; ids are dense 0..N-1.

#include <cstdint>
#include <string>
#include <vector>

#include "gca/data.hpp"

namespace gca {

struct DatasetSplit {
  std::vector<Index> train, val, test;
};

struct Dataset {
  std::vector<SegSample> samples;  // indexed by id
  DatasetSplit split;
  Index num_classes = 0;
};

// 70/15/15 partition of a seed-shuffled id permutation (floor/floor/rest).
DatasetSplit make_split(Index count, std::uint64_t seed);

void save_dataset(const std::string& dir, const std::vector<SegSample>& samples,
                  const DatasetSplit& split, Index num_classes);

Dataset load_dataset(const std::string& dir);

}  // namespace gca
