#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "befunet/data.hpp"

using namespace befunet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("befunet_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST(PnmIo, PpmRoundTripWithinQuantization) {
  TempDir dir;
  Rng rng(201);
  std::vector<float> img(16 * 16 * 3);
  for (auto& v : img) v = static_cast<float>(rng.next_double());
  write_ppm(dir.file("a.ppm"), 16, 16, img);
  int h = 0, w = 0;
  const auto back = read_ppm(dir.file("a.ppm"), h, w);
  ASSERT_EQ(h, 16);
  ASSERT_EQ(w, 16);
  for (std::size_t i = 0; i < img.size(); ++i)
    EXPECT_NEAR(back[i], img[i], 1.0 / 255.0 + 1e-6);
}

TEST(PnmIo, EightBitDataRoundTripsLosslessly) {
  TempDir dir;
  // values already on the 8-bit grid survive write/read exactly
  std::vector<float> img(4 * 4 * 3);
  for (std::size_t i = 0; i < img.size(); ++i)
    img[i] = static_cast<float>(i % 256) / 255.0f;
  write_ppm(dir.file("b.ppm"), 4, 4, img);
  int h = 0, w = 0;
  const auto back = read_ppm(dir.file("b.ppm"), h, w);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_FLOAT_EQ(back[i], img[i]);

  std::vector<std::uint8_t> mask = {0, 1, 2, 3, 200, 255, 7, 0, 1, 1, 2, 3, 4, 5, 6, 7};
  write_pgm(dir.file("b.pgm"), 4, 4, mask);
  const auto mback = read_pgm(dir.file("b.pgm"), h, w);
  EXPECT_EQ(mback, mask);
}

TEST(PnmIo, HandWrittenPgmParsesToExpectedMask) {
  TempDir dir;
  write_bytes(dir.file("hand.pgm"), std::string("P5 2 2 255 ") +
                                        std::string("\x00\x01\x01\x00", 4));
  int h = 0, w = 0;
  const auto m = read_pgm(dir.file("hand.pgm"), h, w);
  ASSERT_EQ(h, 2);
  ASSERT_EQ(w, 2);
  EXPECT_EQ(m, (std::vector<std::uint8_t>{0, 1, 1, 0}));
}

TEST(PnmIo, HeaderCommentsAreSkipped) {
  TempDir dir;
  write_bytes(dir.file("c.pgm"),
              std::string("P5\n# a comment\n2 1\n# another\n255\n") +
                  std::string("\x05\x09", 2));
  int h = 0, w = 0;
  const auto m = read_pgm(dir.file("c.pgm"), h, w);
  EXPECT_EQ(m, (std::vector<std::uint8_t>{5, 9}));
}

TEST(PnmIo, WrongMagicRejectedWithOffset) {
  TempDir dir;
  write_bytes(dir.file("bad.pgm"), "P6 2 2 255 xxxx");
  int h = 0, w = 0;
  try {
    read_pgm(dir.file("bad.pgm"), h, w);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte 0"), std::string::npos);
  }
}

TEST(PnmIo, MaxvalMustBe255) {
  TempDir dir;
  write_bytes(dir.file("m.pgm"), std::string("P5 2 2 254 ") + std::string(4, '\0'));
  int h = 0, w = 0;
  EXPECT_THROW(read_pgm(dir.file("m.pgm"), h, w), FormatError);
}

TEST(PnmIo, TruncatedPayloadRejected) {
  TempDir dir;
  write_bytes(dir.file("t.pgm"), std::string("P5 4 4 255 ") + std::string(7, '\x01'));
  int h = 0, w = 0;
  EXPECT_THROW(read_pgm(dir.file("t.pgm"), h, w), IoError);
  write_bytes(dir.file("t.ppm"), std::string("P6 4 4 255 ") + std::string(20, '\x01'));
  EXPECT_THROW(read_ppm(dir.file("t.ppm"), h, w), IoError);
}

TEST(PnmIo, MissingFileIsIoError) {
  int h = 0, w = 0;
  EXPECT_THROW(read_pgm("/nonexistent/x.pgm", h, w), IoError);
}

TEST(EdgeDerivation, MatchesNeighborScanOracle) {
  Rng rng(202);
  const int h = 12, w = 9;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(h) * w);
  for (auto& v : mask) v = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
  const auto edge = derive_edge(mask, h, w);
  const auto edge2 = derive_edge(mask, h, w);  // pure function of the mask
  EXPECT_EQ(edge, edge2);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool want = false;
      if (y > 0 && mask[static_cast<std::size_t>(y - 1) * w + x] != mask[static_cast<std::size_t>(y) * w + x]) want = true;
      if (y < h - 1 && mask[static_cast<std::size_t>(y + 1) * w + x] != mask[static_cast<std::size_t>(y) * w + x]) want = true;
      if (x > 0 && mask[static_cast<std::size_t>(y) * w + x - 1] != mask[static_cast<std::size_t>(y) * w + x]) want = true;
      if (x < w - 1 && mask[static_cast<std::size_t>(y) * w + x + 1] != mask[static_cast<std::size_t>(y) * w + x]) want = true;
      EXPECT_EQ(edge[static_cast<std::size_t>(y) * w + x], want ? 1.0f : 0.0f);
    }
}

TEST(Synthetic, DeterministicPerSeed) {
  const auto a = generate_synthetic(5, 32, 32, 3, 77);
  const auto b = generate_synthetic(5, 32, 32, 3, 77);
  const auto c = generate_synthetic(5, 32, 32, 3, 78);
  ASSERT_EQ(a.size(), b.size());
  bool any_diff_from_c = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image, b[i].image);  // bitwise
    EXPECT_EQ(a[i].mask, b[i].mask);
    EXPECT_EQ(a[i].edge, b[i].edge);
    if (a[i].mask != c[i].mask) any_diff_from_c = true;
  }
  EXPECT_TRUE(any_diff_from_c);
}

TEST(Synthetic, EdgeEqualsMaskBoundary) {
  for (const auto& s : generate_synthetic(10, 32, 32, 4, 55))
    EXPECT_EQ(s.edge, derive_edge(s.mask, s.h, s.w));
}

TEST(Synthetic, ClassCoverage) {
  const int k = 3;
  const auto samples = generate_synthetic(200, 32, 32, k, 91);
  std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
  std::size_t total = 0;
  for (const auto& s : samples) {
    for (auto v : s.mask) ++counts[v];
    total += s.mask.size();
  }
  std::size_t foreground = 0;
  for (int c = 1; c < k; ++c) {
    EXPECT_GT(counts[static_cast<std::size_t>(c)], total / 100)
        << "class " << c << " nearly absent";
    foreground += counts[static_cast<std::size_t>(c)];
  }
  EXPECT_GE(static_cast<double>(foreground) / static_cast<double>(total), 0.05);
}

TEST(Synthetic, ImageValuesInUnitRange) {
  for (const auto& s : generate_synthetic(5, 32, 32, 3, 19))
    for (float v : s.image) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
}

TEST(Synthetic, FractionalEdgesExerciseEtaBand) {
  const auto samples = generate_synthetic(10, 32, 32, 3, 33, /*fractional=*/true);
  bool saw_band = false, saw_full = false;
  for (const auto& s : samples)
    for (float v : s.edge) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
      if (v > 0.0f && v < 0.3f) saw_band = true;
      if (v == 1.0f) saw_full = true;
    }
  EXPECT_TRUE(saw_band);  // values inside the ignore band exist
  EXPECT_TRUE(saw_full);
}

TEST(Manifest, ParsesPairsAndComments) {
  TempDir dir;
  write_bytes(dir.file("m.txt"),
              "# corpus\nimg_0.ppm,mask_0.pgm\n\n  img_1.ppm , mask_1.pgm  # pair\n");
  const auto entries = read_manifest(dir.file("m.txt"));
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[0].image, "img_0.ppm");
  EXPECT_EQ(entries[1].mask, "mask_1.pgm");
}

TEST(Manifest, MissingCommaRejected) {
  TempDir dir;
  write_bytes(dir.file("m.txt"), "only_one_path\n");
  EXPECT_THROW(read_manifest(dir.file("m.txt")), FormatError);
}

TEST(Manifest, MismatchedDimensionsRejected) {
  TempDir dir;
  const auto samples = generate_synthetic(1, 32, 32, 2, 5);
  write_ppm(dir.file("img.ppm"), 32, 32, samples[0].image);
  std::vector<std::uint8_t> small(static_cast<std::size_t>(16) * 16, 0);
  write_pgm(dir.file("mask.pgm"), 16, 16, small);
  write_bytes(dir.file("m.txt"), "img.ppm,mask.pgm\n");
  EXPECT_THROW(load_dataset(dir.file("m.txt")), FormatError);
}

TEST(Manifest, LoadsSamplesAndDerivesEdges) {
  TempDir dir;
  const auto samples = generate_synthetic(3, 32, 32, 3, 7);
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < 3; ++i) {
    const std::string img = "img_" + std::to_string(i) + ".ppm";
    const std::string mask = "mask_" + std::to_string(i) + ".pgm";
    write_ppm(dir.file(img), 32, 32, samples[static_cast<std::size_t>(i)].image);
    write_pgm(dir.file(mask), 32, 32, samples[static_cast<std::size_t>(i)].mask);
    entries.push_back({img, mask});
  }
  write_manifest(dir.file("m.txt"), entries);
  const auto loaded = load_dataset(dir.file("m.txt"));
  ASSERT_EQ(loaded.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(loaded[i].mask, samples[i].mask);
    EXPECT_EQ(loaded[i].edge, samples[i].edge);  // derived from the mask
  }
}

TEST(TensorConversion, OnehotRejectsOutOfRangeLabels) {
  Sample s;
  s.h = s.w = 2;
  s.image.assign(12, 0.5f);
  s.mask = {0, 1, 2, 3};
  s.edge.assign(4, 0.0f);
  EXPECT_THROW(onehot_tensor<double>(s, 3), FormatError);
  const auto t = onehot_tensor<double>(s, 4);
  EXPECT_EQ(t.shape(), (std::vector<int>{2, 2, 4}));
}
