#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>

#include "pcbb/bitsback.hpp"

using namespace pcbb;
using bitsback::CompressedContainer;
using cvae::CvaeModel;

namespace {

geometry::VoxelGrid demo_grid(int depth, std::uint64_t seed, std::size_t n = 150) {
    auto pc = geometry::gen_synthetic(geometry::ShapeKind::SphereSurface, n, seed);
    return geometry::voxelize(pc, depth);
}

CvaeModel small_model(std::uint64_t seed = 1) {
    return CvaeModel(cvae::default_schedule(3, 4, 6), seed);
}

void zero_params(CvaeModel& model) {
    for (nn::Tensor* t : model.parameters())
        std::fill(t->data(), t->data() + t->size(), 0.0);
}

}  // namespace

TEST(SeedWords, DeterministicAndCount) {
    auto a = bitsback::seed_words(42, 8);
    auto b = bitsback::seed_words(42, 8);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.size(), 8u);
    EXPECT_NE(a, bitsback::seed_words(43, 8));
}

TEST(SeedWords, MinCountFormula) {
    EXPECT_EQ(bitsback::min_seed_word_count(50), 29u);
    EXPECT_EQ(bitsback::min_seed_word_count(4), 6u);
    EXPECT_EQ(bitsback::min_seed_word_count(1), 5u);
}

TEST(EncodeDecodeOne, ExactInverse) {
    CvaeModel model = small_model(2);
    ans::GaussianBuckets buckets(10);
    auto grid = demo_grid(3, 5);
    ans::AnsState state = ans::init_state(
        bitsback::seed_words(7, bitsback::min_seed_word_count(model.latent_dim())));
    ans::AnsState seeded = state;
    bitsback::bb_encode_one(state, grid, model, buckets);
    auto decoded = bitsback::bb_decode_one(state, model, buckets);
    EXPECT_EQ(decoded.depth, grid.depth);
    EXPECT_EQ(decoded.occupancy, grid.occupancy);
    EXPECT_TRUE(state == seeded);
}

TEST(EncodeDecodeOne, InsufficientInitialBits) {
    CvaeModel model = small_model(3);
    ans::GaussianBuckets buckets(12);
    ans::AnsState state = ans::init_state({});
    try {
        bitsback::bb_encode_one(state, demo_grid(3, 5), model, buckets);
        FAIL() << "expected CodecError";
    } catch (const CodecError& e) {
        EXPECT_NE(std::string(e.what()).find("insufficient initial bits"),
                  std::string::npos);
    }
}

// With an all-zero model the posterior equals the uniform prior (latent pops
// and pushes cancel) and every voxel costs exactly one bit, so the net cost
// per cloud is exactly the voxel count.
TEST(CodeLength, UniformModelCostsOneBitPerVoxel) {
    CvaeModel model = small_model(4);
    zero_params(model);
    std::vector<geometry::VoxelGrid> grids{demo_grid(3, 5), demo_grid(3, 6),
                                           demo_grid(3, 7)};
    auto c = bitsback::compress_grids(grids, model, 10, 99, 450);
    auto r = bitsback::report(c);
    const double m = 512.0;
    ASSERT_EQ(r.per_cloud_net_bits.size(), 3u);
    for (double bits : r.per_cloud_net_bits) EXPECT_NEAR(bits, m, 32.0);
    EXPECT_NEAR(static_cast<double>(r.net_bits), 3 * m, 64.0);
}

// Oracle: replay the encoder's table choices and sum symbol_bits; the
// measured net cost must match this discrete code length closely.
TEST(CodeLength, MatchesSymbolBitsOracle) {
    CvaeModel model = small_model(5);
    ans::GaussianBuckets buckets(12);
    auto grid = demo_grid(3, 5);
    ans::AnsState state = ans::init_state(
        bitsback::seed_words(11, bitsback::min_seed_word_count(model.latent_dim())));

    // Replay pops on a copy to learn the indices the encoder will use.
    double oracle_bits = 0.0;
    {
        ans::AnsState replay = state;
        auto pp = cvae::posterior(model, grid);
        std::vector<std::size_t> idx(pp.mu.size());
        for (std::size_t j = 0; j < idx.size(); ++j) {
            auto cdf = ans::gaussian_bucket_cdf_posterior(
                pp.mu[j], std::exp(0.5 * pp.log_var[j]), buckets);
            idx[j] = ans::pop(replay, cdf);
            oracle_bits -= ans::symbol_bits(cdf, idx[j]);
        }
        std::vector<double> z(idx.size());
        for (std::size_t j = 0; j < z.size(); ++j) z[j] = buckets.center(idx[j]);
        auto probs = cvae::likelihood(model, z);
        for (std::size_t m = 0; m < grid.occupancy.size(); ++m)
            oracle_bits += ans::symbol_bits(ans::bernoulli_cdf(probs.p[m]),
                                            grid.occupancy[m]);
        oracle_bits += 12.0 * static_cast<double>(idx.size());  // uniform prior
    }

    const std::uint64_t before = ans::total_bits(state);
    bitsback::bb_encode_one(state, grid, model, buckets);
    const double measured = static_cast<double>(ans::total_bits(state) - before);
    EXPECT_NEAR(measured, oracle_bits, 64.0);
    EXPECT_NEAR(measured / oracle_bits, 1.0, 0.05);
}

TEST(Batch, RoundTripVariousSizes) {
    CvaeModel model = small_model(6);
    for (std::size_t batch : {1u, 7u, 64u}) {
        std::vector<geometry::VoxelGrid> grids;
        for (std::size_t i = 0; i < batch; ++i) grids.push_back(demo_grid(3, 100 + i));
        auto c = bitsback::compress_grids(grids, model, 12, 5, batch * 150);
        auto out = bitsback::decompress_batch(c, model);
        ASSERT_EQ(out.size(), batch);
        for (std::size_t i = 0; i < batch; ++i) {
            EXPECT_EQ(out[i].occupancy, grids[i].occupancy) << "cloud " << i;
        }
    }
}

TEST(Batch, CompressBatchCountsPoints) {
    CvaeModel model = small_model(7);
    std::vector<geometry::PointCloud> clouds;
    for (int i = 0; i < 4; ++i)
        clouds.push_back(geometry::gen_synthetic(geometry::ShapeKind::BoxSurface,
                                                 120 + i, 50 + i));
    auto c = bitsback::compress_batch(clouds, model, 3, 12, 5);
    EXPECT_EQ(c.total_points, 120u + 121 + 122 + 123);
    EXPECT_EQ(c.batch_count, 4u);
    auto out = bitsback::decompress_batch(c, model);
    for (int i = 0; i < 4; ++i)
        EXPECT_EQ(out[i].occupancy, geometry::voxelize(clouds[i], 3).occupancy);
}

TEST(Batch, BadInputsRejected) {
    CvaeModel model = small_model(8);
    EXPECT_THROW(bitsback::compress_grids({}, model, 12, 5, 0), InvalidInputError);
    EXPECT_THROW(bitsback::compress_grids({demo_grid(4, 5)}, model, 12, 5, 10),
                 ConfigError);
    std::vector<geometry::PointCloud> clouds{
        geometry::gen_synthetic(geometry::ShapeKind::Plane, 10, 1)};
    EXPECT_THROW(bitsback::compress_batch(clouds, model, 4, 12, 5), ConfigError);
}

TEST(Batch, WrongModelRefused) {
    CvaeModel model = small_model(9);
    auto c = bitsback::compress_grids({demo_grid(3, 5)}, model, 12, 5, 150);
    CvaeModel other = small_model(10);
    EXPECT_THROW(bitsback::decompress_batch(c, other), CodecError);
}

TEST(Batch, CorruptPayloadDetected) {
    CvaeModel model = small_model(11);
    auto c = bitsback::compress_grids({demo_grid(3, 5), demo_grid(3, 6)}, model, 12,
                                      5, 300);
    CompressedContainer tampered = c;
    tampered.payload[tampered.payload.size() / 2] ^= 0x4u;
    EXPECT_THROW(
        {
            auto grids = bitsback::decompress_batch(tampered, model);
            (void)grids;
        },
        CodecError);

    CompressedContainer truncated = c;
    truncated.payload.resize(1);
    EXPECT_THROW(bitsback::decompress_batch(truncated, model), CodecError);
}

// Amortization: the fixed seed cost is shared across the batch, so bits per
// point must drop as the batch grows.
TEST(CodeLength, BppImprovesWithBatchSize) {
    CvaeModel model = small_model(12);
    auto cloud = geometry::gen_synthetic(geometry::ShapeKind::SphereSurface, 150, 5);
    auto c1 = bitsback::compress_batch({cloud}, model, 3, 12, 5);
    std::vector<geometry::PointCloud> many(100, cloud);
    auto c100 = bitsback::compress_batch(many, model, 3, 12, 5);
    EXPECT_LT(bitsback::report(c100).bpp, bitsback::report(c1).bpp);
}

TEST(CodeLength, ReportAccounting) {
    CvaeModel model = small_model(13);
    auto c = bitsback::compress_grids({demo_grid(3, 5)}, model, 12, 5, 150);
    auto r = bitsback::report(c);
    EXPECT_EQ(r.total_bits, 32 * c.payload.size());
    EXPECT_EQ(r.initial_bits, 32 * c.seeded_word_count);
    EXPECT_EQ(r.net_bits,
              static_cast<std::int64_t>(r.total_bits) -
                  static_cast<std::int64_t>(r.initial_bits));
    EXPECT_NEAR(r.bpp, static_cast<double>(r.total_bits) / 150.0, 1e-12);
}

// Structural property: a full compress/decompress cycle builds prior,
// posterior, and likelihood tables but never a marginal table.
TEST(Structure, NoMarginalTableIsEverBuilt) {
    ans::table_counters().reset();
    CvaeModel model = small_model(14);
    auto c = bitsback::compress_grids({demo_grid(3, 5)}, model, 12, 5, 150);
    auto grids = bitsback::decompress_batch(c, model);
    EXPECT_GT(ans::table_counters().prior, 0u);
    EXPECT_GT(ans::table_counters().posterior, 0u);
    EXPECT_GT(ans::table_counters().likelihood, 0u);
    EXPECT_EQ(ans::table_counters().marginal, 0u);
}

TEST(Container, FileRoundTrip) {
    CvaeModel model = small_model(15);
    auto c = bitsback::compress_grids({demo_grid(3, 5), demo_grid(3, 6)}, model, 12,
                                      77, 300);
    const std::string path = "bb_container.bin";
    bitsback::write_container(c, path);
    auto r = bitsback::read_container(path);
    EXPECT_EQ(r.version, c.version);
    EXPECT_EQ(r.depth, c.depth);
    EXPECT_EQ(r.p_bits, c.p_bits);
    EXPECT_EQ(r.latent_dim, c.latent_dim);
    EXPECT_EQ(r.batch_count, c.batch_count);
    EXPECT_EQ(r.total_points, c.total_points);
    EXPECT_EQ(r.seed, c.seed);
    EXPECT_EQ(r.seeded_word_count, c.seeded_word_count);
    EXPECT_EQ(r.model_hash, c.model_hash);
    EXPECT_EQ(r.payload, c.payload);
    auto grids = bitsback::decompress_batch(r, model);
    EXPECT_EQ(grids.size(), 2u);
    std::remove(path.c_str());
}

TEST(Container, BadFilesRejected) {
    EXPECT_THROW(bitsback::read_container("no_such_container.bin"), IoError);
    const std::string path = "bb_bad_magic.bin";
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOPEnope";
    }
    EXPECT_THROW(bitsback::read_container(path), FormatError);
    std::remove(path.c_str());
}
