#ifndef PCBB_BENCH_HPP
#define PCBB_BENCH_HPP

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pcbb/bitsback.hpp"
#include "pcbb/cvae.hpp"
#include "pcbb/errors.hpp"
#include "pcbb/geometry.hpp"
#include "pcbb/seqcodec.hpp"

namespace pcbb::bench {

struct DatasetSpec {
    geometry::ShapeKind kind = geometry::ShapeKind::Cluster;
    std::size_t clouds = 200;
    std::size_t points = 2000;
    std::uint64_t seed = 1;
};

struct BenchConfig {
    DatasetSpec dataset;
    std::vector<int> depths{4};
    std::vector<std::size_t> batch_sizes{1, 10, 100};
    std::string model_path;  // used when depths has one entry; else models are trained here
    unsigned p_bits = 12;
    std::size_t train_epochs = 3;
    std::size_t train_clouds = 50;
    std::uint64_t seed = 1;
};

struct BenchRow {
    std::string method;  // "bitsback" | "sequential"
    int d = 0;
    std::size_t B = 0;
    double bpp = 0.0;
    std::uint64_t payload_bytes = 0;
    std::uint64_t decoder_bytes = 0;
    double wall_time_ms = 0.0;
};

inline constexpr const char* kCsvHeader = "method,d,B,bpp,payload_bytes,decoder_bytes,wall_time_ms";

inline std::string csv_line(const BenchRow& r) {
    std::ostringstream os;
    os << r.method << "," << r.d << "," << r.B << "," << r.bpp << "," << r.payload_bytes
       << "," << r.decoder_bytes << "," << r.wall_time_ms;
    return os.str();
}

inline void write_csv(const std::vector<BenchRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << kCsvHeader << "\n";
    for (const BenchRow& r : rows) out << csv_line(r) << "\n";
    if (!out) throw IoError("write failed: " + path);
}

inline std::vector<geometry::PointCloud> make_dataset(const DatasetSpec& spec) {
    std::vector<geometry::PointCloud> clouds;
    clouds.reserve(spec.clouds);
    for (std::size_t i = 0; i < spec.clouds; ++i) {
        clouds.push_back(geometry::gen_synthetic(spec.kind, spec.points, spec.seed + i));
    }
    return clouds;
}

inline cvae::CvaeModel quick_model(const BenchConfig& cfg, int depth) {
    if (!cfg.model_path.empty() && cfg.depths.size() == 1) {
        return cvae::deserialize(cfg.model_path);
    }
    cvae::CvaeModel model(cvae::default_schedule(depth), cfg.seed);
    if (cfg.train_epochs > 0) {
        DatasetSpec train_spec = cfg.dataset;
        train_spec.clouds = cfg.train_clouds;
        train_spec.seed = cfg.dataset.seed + 100000;  // held out from the eval set
        std::vector<geometry::VoxelGrid> grids;
        for (const auto& pc : make_dataset(train_spec))
            grids.push_back(geometry::voxelize(pc, depth));
        cvae::train(model, grids, cfg.train_epochs, 0.001, 16, cfg.seed);
    }
    return model;
}

namespace detail {

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

inline void verify_lossless(const std::vector<geometry::PointCloud>& clouds, int depth,
                            const std::vector<geometry::VoxelGrid>& decoded) {
    if (decoded.size() != clouds.size()) throw CodecError("bench: batch size mismatch");
    for (std::size_t i = 0; i < clouds.size(); ++i) {
        if (!(geometry::voxelize(clouds[i], depth) == decoded[i])) {
            throw CodecError("bench: lossless verification failed for cloud " +
                             std::to_string(i));
        }
    }
}

}  // namespace detail

inline BenchRow run_bitsback_cell(const std::vector<geometry::PointCloud>& clouds,
                                  const cvae::CvaeModel& model, int depth, unsigned p_bits,
                                  std::uint64_t seed) {
    auto t0 = std::chrono::steady_clock::now();
    auto container = bitsback::compress_batch(clouds, model, depth, p_bits, seed);
    detail::verify_lossless(clouds, depth, bitsback::decompress_batch(container, model));
    auto rep = bitsback::report(container);
    BenchRow row;
    row.method = "bitsback";
    row.d = depth;
    row.B = clouds.size();
    row.bpp = rep.bpp;
    row.payload_bytes = 4 * container.payload.size();
    row.decoder_bytes = cvae::decoder_size_bytes(model);
    row.wall_time_ms = detail::elapsed_ms(t0);
    return row;
}

inline BenchRow run_sequential_cell(const std::vector<geometry::PointCloud>& clouds,
                                    const cvae::CvaeModel& model, int depth) {
    auto t0 = std::chrono::steady_clock::now();
    auto sc = seqcodec::seq_compress(clouds, model, depth);
    auto decoded = seqcodec::seq_decompress(sc);
    detail::verify_lossless(clouds, depth, decoded);
    BenchRow row;
    row.method = "sequential";
    row.d = depth;
    row.B = clouds.size();
    row.bpp = static_cast<double>(seqcodec::seq_payload_bits(sc)) /
              static_cast<double>(sc.total_points);
    row.payload_bytes = seqcodec::seq_payload_bits(sc) / 8;
    row.decoder_bytes = seqcodec::seq_overhead_bytes(clouds.size(), depth, 4);
    row.wall_time_ms = detail::elapsed_ms(t0);
    return row;
}

// Sweep: bpp of both methods as the batch size grows.
inline std::vector<BenchRow> sweep_batch(const BenchConfig& cfg) {
    std::vector<BenchRow> rows;
    for (int depth : cfg.depths) {
        cvae::CvaeModel model = quick_model(cfg, depth);
        DatasetSpec spec = cfg.dataset;
        spec.clouds = *std::max_element(cfg.batch_sizes.begin(), cfg.batch_sizes.end());
        auto clouds = make_dataset(spec);
        for (std::size_t b : cfg.batch_sizes) {
            std::vector<geometry::PointCloud> batch(clouds.begin(),
                                                    clouds.begin() + static_cast<long>(b));
            rows.push_back(run_bitsback_cell(batch, model, depth, cfg.p_bits, cfg.seed));
        }
        for (std::size_t b : cfg.batch_sizes) {
            std::vector<geometry::PointCloud> batch(clouds.begin(),
                                                    clouds.begin() + static_cast<long>(b));
            rows.push_back(run_sequential_cell(batch, model, depth));
        }
    }
    return rows;
}

// Sweep: bpp and decoder bytes as bit-depth grows.
inline std::vector<BenchRow> sweep_depth(const BenchConfig& cfg) {
    std::vector<BenchRow> rows;
    const std::size_t b = cfg.batch_sizes.front();
    DatasetSpec spec = cfg.dataset;
    spec.clouds = b;
    auto clouds = make_dataset(spec);
    for (int depth : cfg.depths) {
        cvae::CvaeModel model = quick_model(cfg, depth);
        rows.push_back(run_bitsback_cell(clouds, model, depth, cfg.p_bits, cfg.seed));
        rows.push_back(run_sequential_cell(clouds, model, depth));
    }
    return rows;
}

}  // namespace pcbb::bench

#endif  // PCBB_BENCH_HPP
