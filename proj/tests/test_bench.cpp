#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "pcbb/bench.hpp"

using namespace pcbb;

namespace {

bench::BenchConfig quick_config() {
    bench::BenchConfig cfg;
    cfg.dataset.kind = geometry::ShapeKind::SphereSurface;
    cfg.dataset.points = 120;
    cfg.dataset.seed = 9;
    cfg.depths = {3};
    cfg.batch_sizes = {1, 2, 4};
    cfg.train_epochs = 0;  // untrained model keeps the unit test fast
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST(Csv, LineFormat) {
    bench::BenchRow r;
    r.method = "bitsback";
    r.d = 5;
    r.B = 100;
    r.bpp = 1.5;
    r.payload_bytes = 1234;
    r.decoder_bytes = 99;
    r.wall_time_ms = 2.25;
    EXPECT_EQ(bench::csv_line(r), "bitsback,5,100,1.5,1234,99,2.25");
}

TEST(Csv, HeaderSchema) {
    EXPECT_STREQ(bench::kCsvHeader, "method,d,B,bpp,payload_bytes,decoder_bytes,wall_time_ms");
}

TEST(Csv, WriteFile) {
    std::vector<bench::BenchRow> rows(2);
    rows[0].method = "bitsback";
    rows[1].method = "sequential";
    const std::string path = "bench_out.csv";
    bench::write_csv(rows, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, bench::kCsvHeader);
    std::size_t count = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++count;
    EXPECT_EQ(count, 2u);
    std::remove(path.c_str());
}

TEST(Dataset, DeterministicAndDistinct) {
    bench::DatasetSpec spec;
    spec.kind = geometry::ShapeKind::Cluster;
    spec.clouds = 5;
    spec.points = 50;
    spec.seed = 3;
    auto a = bench::make_dataset(spec);
    auto b = bench::make_dataset(spec);
    ASSERT_EQ(a.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) {
        ASSERT_EQ(a[i].size(), 50u);
        EXPECT_EQ(a[i], b[i]);
    }
    EXPECT_NE(a[0], a[1]);
}

TEST(QuickModel, LoadsFromPathWhenSingleDepth) {
    cvae::CvaeModel model(cvae::default_schedule(3), 77);
    const std::string path = "bench_model.bin";
    cvae::serialize(model, path);
    bench::BenchConfig cfg = quick_config();
    cfg.model_path = path;
    auto loaded = bench::quick_model(cfg, 3);
    EXPECT_EQ(cvae::model_hash(loaded), cvae::model_hash(model));
    std::remove(path.c_str());
}

TEST(Sweeps, BatchSweepShape) {
    auto cfg = quick_config();
    auto rows = bench::sweep_batch(cfg);
    ASSERT_EQ(rows.size(), 6u);  // 3 batch sizes x 2 methods
    for (int i = 0; i < 3; ++i) {
        EXPECT_EQ(rows[i].method, "bitsback");
        EXPECT_EQ(rows[i + 3].method, "sequential");
        EXPECT_EQ(rows[i].B, cfg.batch_sizes[i]);
        EXPECT_EQ(rows[i + 3].B, cfg.batch_sizes[i]);
        EXPECT_EQ(rows[i].d, 3);
        EXPECT_GT(rows[i].bpp, 0.0);
        EXPECT_GT(rows[i].payload_bytes, 0u);
        EXPECT_GE(rows[i].wall_time_ms, 0.0);
    }
}

TEST(Sweeps, DecoderBytesSemantics) {
    auto cfg = quick_config();
    auto rows = bench::sweep_batch(cfg);
    // bits-back decoder artifact is the model file: constant across B
    EXPECT_EQ(rows[0].decoder_bytes, rows[2].decoder_bytes);
    EXPECT_EQ(rows[0].decoder_bytes,
              cvae::decoder_size_bytes(bench::quick_model(cfg, 3)));
    // sequential decoder artifact is B tables of 4-byte entries
    for (int i = 0; i < 3; ++i) {
        EXPECT_EQ(rows[i + 3].decoder_bytes,
                  seqcodec::seq_overhead_bytes(cfg.batch_sizes[i], 3, 4));
    }
}

TEST(Sweeps, BatchSweepReproducible) {
    auto cfg = quick_config();
    auto a = bench::sweep_batch(cfg);
    auto b = bench::sweep_batch(cfg);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].bpp, b[i].bpp);
        EXPECT_EQ(a[i].payload_bytes, b[i].payload_bytes);
        EXPECT_EQ(a[i].decoder_bytes, b[i].decoder_bytes);
    }
}

TEST(Sweeps, DepthSweepShape) {
    auto cfg = quick_config();
    cfg.depths = {3, 4};
    cfg.batch_sizes = {2};
    auto rows = bench::sweep_depth(cfg);
    ASSERT_EQ(rows.size(), 4u);  // 2 depths x 2 methods
    EXPECT_EQ(rows[0].d, 3);
    EXPECT_EQ(rows[1].d, 3);
    EXPECT_EQ(rows[2].d, 4);
    EXPECT_EQ(rows[3].d, 4);
    EXPECT_EQ(rows[0].method, "bitsback");
    EXPECT_EQ(rows[1].method, "sequential");
    for (const auto& r : rows) EXPECT_EQ(r.B, 2u);
}
