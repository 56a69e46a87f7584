#include <gtest/gtest.h>

#include <filesystem>

#include "dsmm/evaluation.hpp"
#include "dsmm/io.hpp"
#include "dsmm/trainer.hpp"
#include "oracles.hpp"

namespace dsmm {
namespace {

namespace fs = std::filesystem;
using testing::gaussian_matrix;

class IoTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("dsmm_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

MeasurementMatrix learned_matrix(std::uint64_t seed, double alpha = 0.5) {
  return constrain(gaussian_matrix(16, 64, seed), alpha, 8).matrix;
}

TEST(MatrixBinary, RoundTripIsBitExact) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const MeasurementMatrix m = learned_matrix(seed);
    const std::string bytes = io::encode_matrix(m);
    EXPECT_EQ(bytes.size(), 4 + 4 + 12 + 8 + 1 + 8 * 16 * 64u);
    const MeasurementMatrix back = io::decode_matrix(bytes);
    EXPECT_EQ(std::memcmp(back.entries.data(), m.entries.data(), sizeof(double) * m.entries.size()), 0);
    EXPECT_EQ(back.sparsity_degree, 0.5);
    EXPECT_EQ(back.provenance, Provenance::kLearned);
    EXPECT_EQ(back.block_size, 8);
    EXPECT_EQ(io::encode_matrix(back), bytes);
  }
}

TEST(MatrixBinary, LayoutIsLittleEndian) {
  const std::string bytes = io::encode_matrix(learned_matrix(1));
  EXPECT_EQ(bytes.substr(0, 4), "DSMM");
  EXPECT_EQ(bytes.substr(4, 4), std::string("\x01\x00\x00\x00", 4));
  EXPECT_EQ(bytes.substr(8, 4), std::string("\x10\x00\x00\x00", 4));
  EXPECT_EQ(bytes.substr(12, 4), std::string("\x40\x00\x00\x00", 4));
  EXPECT_EQ(bytes[28], 0);  // provenance: learned
}

TEST(MatrixBinary, RejectsBadMagicVersionAndTruncation) {
  std::string bytes = io::encode_matrix(learned_matrix(2));
  std::string bad = bytes;
  bad[0] = 'X';
  try {
    io::decode_matrix(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
    EXPECT_EQ(e.offset(), 0);
  }
  bad = bytes;
  bad[4] = 2;
  EXPECT_THROW(io::decode_matrix(bad), FormatError);
  try {
    io::decode_matrix(bytes.substr(0, 100));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
    EXPECT_GE(e.offset(), 29);
  }
  EXPECT_THROW(io::decode_matrix(bytes + "x"), FormatError);
}

TEST(MatrixText, RoundTripIsValueExact) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const MeasurementMatrix m = learned_matrix(seed);
    const std::string text = io::encode_matrix_text(m);
    const MeasurementMatrix back = io::decode_matrix_text(text);
    EXPECT_TRUE(back.entries == m.entries);
    EXPECT_EQ(back.provenance, Provenance::kImported);
    EXPECT_EQ(io::encode_matrix_text(back), text);
  }
}

TEST(MatrixText, ListsExactlyNnzTriplesRowMajor) {
  const MeasurementMatrix m = learned_matrix(3, 0.5);
  const std::string text = io::encode_matrix_text(m);
  std::istringstream in(text);
  long long n_b, n_B, B, nnz;
  double alpha;
  in >> n_b >> n_B >> B >> alpha >> nnz;
  EXPECT_EQ(nnz, 512);
  EXPECT_EQ(nnz, m.nonzeros());
  long long r, c, prev = -1, count = 0;
  double v;
  while (in >> r >> c >> v) {
    EXPECT_GT(r * n_B + c, prev);
    prev = r * n_B + c;
    ++count;
  }
  EXPECT_EQ(count, nnz);
}

TEST(MatrixText, RejectsMalformedInput) {
  EXPECT_THROW(io::decode_matrix_text("x"), FormatError);
  EXPECT_THROW(io::decode_matrix_text("1 4 2 1 2\n0 0 1\n"), FormatError);          // missing triple
  EXPECT_THROW(io::decode_matrix_text("1 4 2 1 1\n0 9 1\n"), FormatError);          // out of range
  EXPECT_THROW(io::decode_matrix_text("1 4 2 1 2\n0 1 1\n0 0 1\n"), FormatError);   // unsorted
  EXPECT_NO_THROW(io::decode_matrix_text("1 4 2 1 2\n0 0 1\n0 1 -2.5\n"));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TrainConfig cfg;
  cfg.block_size = 4;
  cfg.sampling_ratio = 0.25;
  cfg.patch_size = 8;
  cfg.features = 3;
  cfg.residual = false;
  TrainResult init = initialize(cfg);
  const std::string bytes = io::encode_checkpoint(init.sampling, init.recon);
  io::Checkpoint ck = io::decode_checkpoint(bytes);
  EXPECT_EQ(ck.sampling.theta(), init.sampling.theta());
  EXPECT_EQ(ck.sampling.alpha(), cfg.alpha);
  EXPECT_FALSE(ck.recon.residual);
  const auto a = init.recon.tensors();
  const auto b = ck.recon.tensors();
  for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->vec(), b[i]->vec());
  EXPECT_EQ(io::encode_checkpoint(ck.sampling, ck.recon), bytes);
  EXPECT_THROW(io::decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
}

TEST(Measurements, RoundTrip) {
  io::MeasurementFile f;
  f.block_size = 8;
  f.rows = 30;
  f.cols = 17;
  f.measurements = testing::random_tensor({1, 16, 4, 3}, 1);
  const io::MeasurementFile back = io::decode_measurements(io::encode_measurements(f));
  EXPECT_EQ(back.rows, 30);
  EXPECT_EQ(back.cols, 17);
  EXPECT_EQ(back.measurements.shape(), f.measurements.shape());
  EXPECT_EQ(back.measurements.vec(), f.measurements.vec());
}

TEST_F(IoTest, ImagesRoundTripThroughPgmAndPng) {
  RowMatrixXd img(3, 5);
  for (Index i = 0; i < img.size(); ++i) img.data()[i] = static_cast<double>(i * 17 % 256) / 255.0;
  for (const char* name : {"a.pgm", "b.png"}) {
    io::write_image(dir_ / name, img);
    const RowMatrixXd back = io::read_image(dir_ / name);
    EXPECT_LT((back - img).cwiseAbs().maxCoeff(), 1e-15) << name;
  }
  EXPECT_EQ(io::list_images(dir_), (std::vector<fs::path>{dir_ / "a.pgm", dir_ / "b.png"}));
}

TEST_F(IoTest, AsciiPgmAndClamping) {
  io::atomic_write(dir_ / "p2.pgm", "P2\n# comment\n2 1\n15\n0 15\n");
  const RowMatrixXd img = io::read_image(dir_ / "p2.pgm");
  EXPECT_EQ(img(0, 0), 0.0);
  EXPECT_EQ(img(0, 1), 1.0);
  const std::string enc = io::encode_pgm((RowMatrixXd(1, 2) << -0.5, 1.5).finished());
  EXPECT_EQ(enc.substr(enc.size() - 2), std::string("\x00\xff", 2));
}

TEST_F(IoTest, AtomicWriteLeavesNoTempFile) {
  io::atomic_write(dir_ / "sub" / "x.bin", "hello");
  EXPECT_EQ(io::read_file(dir_ / "sub" / "x.bin"), "hello");
  EXPECT_FALSE(fs::exists(dir_ / "sub" / "x.bin.tmp"));
  EXPECT_THROW(io::read_file(dir_ / "missing"), IoError);
}

TEST_F(IoTest, ReadMatrixDetectsFormat) {
  const MeasurementMatrix m = learned_matrix(4);
  io::atomic_write(dir_ / "m.bin", io::encode_matrix(m));
  io::atomic_write(dir_ / "m.txt", io::encode_matrix_text(m));
  io::atomic_write(dir_ / "junk", "garbage");
  EXPECT_EQ(io::read_matrix(dir_ / "m.bin").entries, m.entries);
  EXPECT_EQ(io::read_matrix(dir_ / "m.txt").entries, m.entries);
  EXPECT_THROW(io::read_matrix(dir_ / "junk"), FormatError);
}

}  // namespace
}  // namespace dsmm
