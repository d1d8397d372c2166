#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "gca/augment.hpp"
#include "gca/dataset.hpp"
#include "gca/nn.hpp"
#include "gca/synth.hpp"
#include "testutil.hpp"

using namespace gca;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("gca_test_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

void write_bytes(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out.write(s.data(), std::streamsize(s.size()));
}

}  // namespace

// ----------------------------- image files -----------------------------

TEST_CASE("hand-built grayscale file parses to its pixel values") {
  TempDir td;
  fs::path p = td.path / "tiny.pgm";
  std::string bytes = "P5\n2 2\n255\n";
  bytes += char(0);
  bytes += char(85);
  bytes += char(170);
  bytes += char(255);
  write_bytes(p, bytes);
  PnmImage img = load_pnm(p.string());
  CHECK(img.width == 2);
  CHECK(img.height == 2);
  CHECK(img.channels == 1);
  CHECK(img.pixels == std::vector<std::uint8_t>{0, 85, 170, 255});
}

TEST_CASE("image save and load round-trips bitwise") {
  TempDir td;
  Rng rng(3);
  for (int ch : {1, 3}) {
    PnmImage img;
    img.width = 7;
    img.height = 5;
    img.channels = ch;
    img.pixels.resize(size_t(7 * 5 * ch));
    for (auto& v : img.pixels) v = std::uint8_t(rng.uniform_int(256));
    fs::path p = td.path / (ch == 1 ? "a.pgm" : "a.ppm");
    save_pnm(p.string(), img);
    PnmImage back = load_pnm(p.string());
    CHECK(back.width == img.width);
    CHECK(back.height == img.height);
    CHECK(back.channels == img.channels);
    CHECK(back.pixels == img.pixels);
  }
}

TEST_CASE("malformed image files are rejected") {
  TempDir td;
  fs::path p = td.path / "bad.pgm";
  write_bytes(p, "P5\n2 2\n65535\n....");
  CHECK_THROWS_AS(load_pnm(p.string()), std::runtime_error);
  write_bytes(p, "P4\n2 2\n255\n....");
  CHECK_THROWS_AS(load_pnm(p.string()), std::runtime_error);
  write_bytes(p, "P5\n2 2\n255\nab");  // two bytes short
  CHECK_THROWS_AS(load_pnm(p.string()), std::runtime_error);
  CHECK_THROWS_AS(load_pnm((td.path / "absent.pgm").string()), std::runtime_error);
}

// ------------------------------ synthesis ------------------------------

TEST_CASE("generation is a pure function of the seed") {
  SynthConfig cfg;
  cfg.count = 6;
  cfg.seed = 42;
  auto a = synth_generate(cfg);
  auto b = synth_generate(cfg);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image.data == b[i].image.data);
    CHECK(a[i].mask.data == b[i].mask.data);
  }
  cfg.seed = 43;
  auto c = synth_generate(cfg);
  CHECK(a[0].image.data != c[0].image.data);
}

TEST_CASE("masks hold exactly the configured label alphabet") {
  SynthConfig cfg;
  cfg.num_classes = 2;
  cfg.count = 10;
  cfg.seed = 7;
  for (const auto& s : synth_generate(cfg)) {
    for (float v : s.mask.data) {
      CHECK(v == std::floor(v));
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
    for (float v : s.image.data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 255.0f);
      CHECK(v == std::floor(v));  // quantized so disk round-trips are exact
    }
  }
}

TEST_CASE("rasterized ellipse area approximates pi a b") {
  detail::ShapeSpec sp;
  sp.ellipse = true;
  sp.cy = 128.0;
  sp.cx = 130.0;
  sp.ry = 40.0;
  sp.rx = 60.0;
  double area = double(detail::rasterize(sp, 256).size());
  double expect = 3.14159265358979 * sp.ry * sp.rx;
  CHECK(std::abs(area - expect) / expect < 0.10);
}

TEST_CASE("every foreground class shows up in at least 80 percent of samples") {
  SynthConfig cfg;
  cfg.count = 200;
  cfg.seed = 11;
  auto data = synth_generate(cfg);
  std::vector<int> present(4, 0);
  for (const auto& s : data) {
    std::set<int> ids;
    for (float v : s.mask.data) ids.insert(int(v));
    for (int k : ids) ++present[size_t(k)];
    CHECK(ids.size() >= 2);  // at least one foreground class is forced
  }
  for (int k = 1; k < 4; ++k) CHECK(present[size_t(k)] >= 160);
}

TEST_CASE("painted classes sit in their intensity bands above the background") {
  SynthConfig cfg;
  cfg.count = 12;
  cfg.seed = 3;
  for (const auto& s : synth_generate(cfg)) {
    double bg_sum = 0, bg_n = 0;
    for (Index i = 0; i < s.mask.numel(); ++i)
      if (s.mask.data[size_t(i)] == 0.0f) {
        bg_sum += s.image.data[size_t(i)];
        ++bg_n;
      }
    for (int k = 1; k < 4; ++k) {
      double sum = 0, n = 0;
      for (Index i = 0; i < s.mask.numel(); ++i)
        if (s.mask.data[size_t(i)] == float(k)) {
          sum += s.image.data[size_t(i)];
          ++n;
        }
      if (n > 0) CHECK(sum / n > bg_sum / bg_n + 20.0);
    }
  }
}

// ------------------------------- resizing -------------------------------

TEST_CASE("general resampling agrees with the dedicated doubler") {
  Tensor4f x = testutil::randn({2, 3, 5, 4}, 91);
  Tensor4f up = bilinear_upsample_x2(x);
  Tensor4f gen = resize_bilinear(x, 10, 8);
  REQUIRE(up.shape == gen.shape);
  CHECK(testutil::all_close(up, gen, 1e-6f, 1e-6f));
}

TEST_CASE("same-size resampling is the identity") {
  Tensor4f x = testutil::randn({1, 2, 6, 7}, 92);
  CHECK(resize_bilinear(x, 6, 7).data == x.data);
  CHECK(resize_nearest(x, 6, 7).data == x.data);
}

TEST_CASE("nearest doubling replicates pixels") {
  Tensor4f x({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor4f y = resize_nearest(x, 4, 4);
  for (Index yy = 0; yy < 4; ++yy)
    for (Index xx = 0; xx < 4; ++xx) CHECK(y(0, 0, yy, xx) == x(0, 0, yy / 2, xx / 2));
}

TEST_CASE("padded resize letterboxes the short side") {
  SegSample s;
  s.image = Tensor4f::full({1, 1, 100, 50}, 200.0f);
  s.mask = Tensor4f::full({1, 1, 100, 50}, 1.0f);
  PadInfo info = resize_with_pad(s, 64);
  CHECK(info.y0 == 0);
  CHECK(info.x0 == 16);
  CHECK(info.h == 64);
  CHECK(info.w == 32);
  CHECK(s.image.shape == Shape4{1, 1, 64, 64});
  for (Index y = 0; y < 64; ++y)
    for (Index x = 0; x < 64; ++x) {
      bool inside = x >= 16 && x < 48;
      CHECK(s.image(0, 0, y, x) == (inside ? 200.0f : 128.0f));
      CHECK(s.mask(0, 0, y, x) == (inside ? 1.0f : 0.0f));
    }

  SegSample sq;
  sq.image = testutil::randn({1, 1, 32, 32}, 93);
  sq.mask = Tensor4f({1, 1, 32, 32});
  PadInfo sq_info = resize_with_pad(sq, 64);
  CHECK(sq_info.x0 == 0);
  CHECK(sq_info.w == 64);

  SegSample bad;
  bad.image = Tensor4f({1, 1, 8, 8});
  bad.mask = Tensor4f({1, 1, 8, 8});
  CHECK_THROWS_AS(resize_with_pad(bad, 48), std::runtime_error);
}

TEST_CASE("cropping back out of the letterbox recovers the resized mask") {
  SynthConfig cfg;
  cfg.image_size = 48;
  cfg.count = 3;
  cfg.seed = 21;
  for (auto& s : synth_generate(cfg)) {
    Tensor4f original_mask = s.mask.detached();
    SegSample padded = s;
    padded.image = resize_bilinear(s.image, 40, 48);  // make it non-square first
    padded.mask = resize_nearest(s.mask, 40, 48);
    Tensor4f non_square = padded.mask.detached();
    PadInfo info = resize_with_pad(padded, 64);
    Tensor4f back = crop_content(padded.mask, info);
    Tensor4f expect = resize_nearest(non_square, info.h, info.w);
    CHECK(back.data == expect.data);
    (void)original_mask;
  }
}

// ------------------------------ augmentation ------------------------------

namespace {
AugmentConfig rigid_config(Index out) {
  AugmentConfig cfg;
  cfg.scale_lo = cfg.scale_hi = 1.0;
  cfg.jitter = 0.0;
  cfg.hflip_p = 0.0;
  cfg.out_size = out;
  return cfg;
}
}  // namespace

TEST_CASE("identity augmentation leaves the sample untouched") {
  SynthConfig sc;
  sc.count = 1;
  sc.seed = 31;
  SegSample s = synth_generate(sc)[0];
  Rng rng(5);
  SegSample out = augment_geometric(s, rng, rigid_config(64));
  CHECK(out.image.data == s.image.data);
  CHECK(out.mask.data == s.mask.data);
}

TEST_CASE("double flip restores the original") {
  SynthConfig sc;
  sc.count = 1;
  sc.seed = 33;
  SegSample s = synth_generate(sc)[0];
  AugmentConfig cfg = rigid_config(64);
  cfg.hflip_p = 1.0;
  Rng r1(1), r2(2);
  SegSample once = augment_geometric(s, r1, cfg);
  SegSample twice = augment_geometric(once, r2, cfg);
  CHECK(twice.image.data == s.image.data);
  CHECK(twice.mask.data == s.mask.data);
  CHECK(once.image.data != s.image.data);
}

TEST_CASE("augmented masks never invent labels") {
  SynthConfig sc;
  sc.count = 4;
  sc.seed = 35;
  auto samples = synth_generate(sc);
  AugmentConfig cfg;
  cfg.out_size = 64;
  for (int draw = 0; draw < 100; ++draw) {
    const SegSample& s = samples[size_t(draw % samples.size())];
    std::set<float> before(s.mask.data.begin(), s.mask.data.end());
    before.insert(0.0f);  // pad id is always admissible
    Rng rng = Rng::derive(99, rng_stream::kAugment, std::uint64_t(draw));
    SegSample out = augment_sample(s, rng, cfg);
    CHECK(out.image.shape == Shape4{1, 1, 64, 64});
    for (float v : out.mask.data) {
      CHECK(v == std::floor(v));
      CHECK(before.count(v) == 1);
    }
  }
}

TEST_CASE("augmentation is deterministic in the rng state") {
  SynthConfig sc;
  sc.count = 1;
  sc.seed = 36;
  SegSample s = synth_generate(sc)[0];
  AugmentConfig cfg;
  cfg.out_size = 64;
  Rng a = Rng::derive(7, rng_stream::kAugment, 3);
  Rng b = Rng::derive(7, rng_stream::kAugment, 3);
  SegSample oa = augment_sample(s, a, cfg);
  SegSample ob = augment_sample(s, b, cfg);
  CHECK(oa.image.data == ob.image.data);
  CHECK(oa.mask.data == ob.mask.data);
  Rng c = Rng::derive(7, rng_stream::kAugment, 4);
  SegSample oc = augment_sample(s, c, cfg);
  CHECK(oa.image.data != oc.image.data);
}

TEST_CASE("zero-magnitude color perturbation is the identity up to quantization") {
  Tensor4f img({1, 3, 8, 8});
  Rng rng(55);
  for (auto& v : img.data) v = float(rng.uniform_int(256));
  AugmentConfig cfg;
  cfg.hue = cfg.sat = cfg.val = 0.0;
  Rng draw(1);
  Tensor4f out = augment_hsv(img, draw, cfg);
  for (Index i = 0; i < img.numel(); ++i)
    CHECK(std::abs(out.data[size_t(i)] - img.data[size_t(i)]) <= 1.0f);
}

TEST_CASE("gray pixels stay gray under any hue shift") {
  Tensor4f img({1, 3, 4, 4});
  for (Index y = 0; y < 4; ++y)
    for (Index x = 0; x < 4; ++x)
      for (Index c = 0; c < 3; ++c) img(0, c, y, x) = float(10 + 16 * (4 * y + x));
  AugmentConfig cfg;
  cfg.sat = 0.0;
  cfg.val = 0.0;  // hue keeps its default magnitude
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    Tensor4f out = augment_hsv(img, rng, cfg);
    for (Index y = 0; y < 4; ++y)
      for (Index x = 0; x < 4; ++x) {
        CHECK(out(0, 0, y, x) == out(0, 1, y, x));
        CHECK(out(0, 1, y, x) == out(0, 2, y, x));
      }
  }
}

TEST_CASE("color space round-trip stays within one intensity step") {
  Rng rng(77);
  float worst = 0.0f;
  for (int i = 0; i < 10000; ++i) {
    float r = float(rng.uniform()), g = float(rng.uniform()), b = float(rng.uniform());
    float h, s, v, r2, g2, b2;
    detail::rgb_to_hsv(r, g, b, h, s, v);
    detail::hsv_to_rgb(h, s, v, r2, g2, b2);
    worst = std::max({worst, std::abs(r - r2), std::abs(g - g2), std::abs(b - b2)});
  }
  CHECK(worst <= 1.0f / 255.0f);
}

TEST_CASE("grayscale samples never pass through the color path") {
  SynthConfig sc;
  sc.count = 1;
  sc.seed = 38;
  SegSample s = synth_generate(sc)[0];
  AugmentConfig cfg;
  cfg.out_size = 64;
  cfg.modality = Modality::Rgb;  // even when asked for, 1-channel input skips hsv
  Rng a(9), b(9);
  SegSample via_pipeline = augment_sample(s, a, cfg);
  SegSample geometric_only = augment_geometric(s, b, cfg);
  CHECK(via_pipeline.image.data == geometric_only.image.data);

  cfg.modality = Modality::Gray;  // and gray modality skips it even on rgb data
  SegSample rgb;
  rgb.image = Tensor4f::full({1, 3, 16, 16}, 90.0f);
  rgb.mask = Tensor4f({1, 1, 16, 16});
  Rng c(9), d(9);
  cfg.out_size = 16;
  SegSample gray_pipe = augment_sample(rgb, c, cfg);
  SegSample gray_geo = augment_geometric(rgb, d, cfg);
  CHECK(gray_pipe.image.data == gray_geo.image.data);
}

// ------------------------------- datasets -------------------------------

TEST_CASE("splits are seeded permutations in seventy fifteen fifteen") {
  DatasetSplit sp = make_split(250, 4);
  CHECK(sp.train.size() == 175);
  CHECK(sp.val.size() == 37);
  CHECK(sp.test.size() == 38);
  std::set<Index> all(sp.train.begin(), sp.train.end());
  all.insert(sp.val.begin(), sp.val.end());
  all.insert(sp.test.begin(), sp.test.end());
  CHECK(all.size() == 250);
  CHECK(*all.begin() == 0);
  CHECK(*all.rbegin() == 249);

  DatasetSplit again = make_split(250, 4);
  CHECK(again.train == sp.train);
  DatasetSplit other = make_split(250, 5);
  CHECK(other.train != sp.train);

  DatasetSplit tiny = make_split(20, 1);
  CHECK(tiny.train.size() == 14);
  CHECK(tiny.val.size() == 3);
  CHECK(tiny.test.size() == 3);
  CHECK_THROWS_AS(make_split(2, 0), std::runtime_error);
}

TEST_CASE("dataset directory round-trips bitwise") {
  TempDir td;
  SynthConfig sc;
  sc.count = 6;
  sc.seed = 51;
  auto samples = synth_generate(sc);
  DatasetSplit sp = make_split(6, 51);
  save_dataset(td.path.string(), samples, sp, 4);
  Dataset ds = load_dataset(td.path.string());
  CHECK(ds.num_classes == 4);
  CHECK(ds.split.train == sp.train);
  CHECK(ds.split.val == sp.val);
  CHECK(ds.split.test == sp.test);
  REQUIRE(ds.samples.size() == samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    CHECK(ds.samples[i].image.data == samples[i].image.data);
    CHECK(ds.samples[i].mask.data == samples[i].mask.data);
  }
}

TEST_CASE("broken dataset directories are rejected") {
  TempDir td;
  CHECK_THROWS_AS(load_dataset(td.path.string()), std::runtime_error);

  SynthConfig sc;
  sc.count = 4;
  sc.seed = 52;
  auto samples = synth_generate(sc);
  DatasetSplit sp = make_split(4, 52);

  // mask value outside the declared class range
  save_dataset(td.path.string(), samples, sp, 2);
  CHECK_THROWS_AS(load_dataset(td.path.string()), std::runtime_error);

  // split ids not covering 0..N-1
  save_dataset(td.path.string(), samples, sp, 4);
  DatasetSplit gap = sp;
  gap.test.back() = 9;
  save_dataset(td.path.string(), samples, gap, 4);
  CHECK_THROWS_AS(load_dataset(td.path.string()), std::runtime_error);
}

TEST_CASE("batches are normalized and channel-replicated") {
  SynthConfig sc;
  sc.count = 3;
  sc.seed = 53;
  auto samples = synth_generate(sc);
  auto [images, targets] = make_batch(samples, {2, 0}, 3);
  CHECK(images.shape == Shape4{2, 3, 64, 64});
  CHECK(targets.shape == Shape4{2, 1, 64, 64});
  for (Index y = 0; y < 64; ++y)
    for (Index x = 0; x < 64; ++x) {
      CHECK(images(0, 0, y, x) == samples[2].image(0, 0, y, x) / 255.0f);
      CHECK(images(0, 1, y, x) == images(0, 0, y, x));
      CHECK(images(0, 2, y, x) == images(0, 0, y, x));
      CHECK(targets(1, 0, y, x) == samples[0].mask(0, 0, y, x));
    }
  for (float v : images.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }

  auto samples2 = samples;
  samples2[1].image = Tensor4f({1, 1, 32, 32});
  samples2[1].mask = Tensor4f({1, 1, 32, 32});
  CHECK_THROWS_AS(make_batch(samples2, {0, 1}, 3), std::runtime_error);
  CHECK_THROWS_AS(make_batch(samples, {}, 3), std::runtime_error);
}
