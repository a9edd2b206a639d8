#ifndef PCBB_SEQCODEC_HPP
#define PCBB_SEQCODEC_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "pcbb/ans.hpp"
#include "pcbb/cvae.hpp"
#include "pcbb/errors.hpp"
#include "pcbb/geometry.hpp"

namespace pcbb::seqcodec {

// Sequential-coding baseline: each cloud is coded under its own explicit
// per-voxel probability table; the tables are the decoder-side artifact
// whose size the overhead accounting charges.
struct SeqCompressed {
    int depth = 0;
    // per cloud: quantized frequency of voxel value 1, one entry per voxel
    std::vector<std::vector<std::uint16_t>> tables;
    std::vector<std::vector<std::uint32_t>> payloads;
    std::uint64_t total_points = 0;

    std::size_t batch_count() const { return payloads.size(); }
};

inline std::vector<std::uint16_t> model_voxel_table(const cvae::CvaeModel& model,
                                                    const geometry::VoxelGrid& grid) {
    cvae::PosteriorParams pp = cvae::posterior(model, grid);
    // posterior mean latent, no sampling
    cvae::VoxelProbs probs = cvae::likelihood(model, pp.mu);
    std::vector<std::uint16_t> table(probs.p.size());
    for (std::size_t m = 0; m < probs.p.size(); ++m) {
        auto f1 = static_cast<std::uint32_t>(std::lround(probs.p[m] * ans::kProbScale));
        table[m] = static_cast<std::uint16_t>(std::clamp<std::uint32_t>(f1, 1,
                                                                        ans::kProbScale - 1));
    }
    return table;
}

inline SeqCompressed seq_compress(const std::vector<geometry::PointCloud>& clouds,
                                  const cvae::CvaeModel& model, int depth) {
    if (clouds.empty()) throw InvalidInputError("seq_compress: empty batch");
    SeqCompressed sc;
    sc.depth = depth;
    for (const auto& pc : clouds) {
        geometry::VoxelGrid grid = geometry::voxelize(pc, depth);
        if (grid.depth != model.depth()) {
            throw ConfigError("seq_compress: depth mismatch with model");
        }
        std::vector<std::uint16_t> table = model_voxel_table(model, grid);
        ans::AnsState state = ans::init_state({});
        for (std::size_t m = grid.occupancy.size(); m-- > 0;) {
            std::uint32_t f1 = table[m];
            ans::push(state, grid.occupancy[m],
                      ans::QuantizedCdf({ans::kProbScale - f1, f1}));
        }
        sc.tables.push_back(std::move(table));
        sc.payloads.push_back(ans::flush(state));
        sc.total_points += pc.size();
    }
    return sc;
}

// Decodes from the stored tables alone; no model weights are consulted.
inline std::vector<geometry::VoxelGrid> seq_decompress(const SeqCompressed& sc) {
    if (sc.tables.size() != sc.payloads.size()) {
        throw CodecError("seq_decompress: table count " + std::to_string(sc.tables.size()) +
                         " != payload count " + std::to_string(sc.payloads.size()));
    }
    std::vector<geometry::VoxelGrid> grids;
    const std::size_t voxels = std::size_t{1} << (3 * sc.depth);
    for (std::size_t i = 0; i < sc.payloads.size(); ++i) {
        if (sc.tables[i].size() != voxels) {
            throw CodecError("seq_decompress: missing or malformed table for cloud " +
                             std::to_string(i));
        }
        ans::AnsState state = ans::restore(sc.payloads[i]);
        geometry::VoxelGrid grid;
        grid.depth = sc.depth;
        grid.occupancy.resize(voxels);
        for (std::size_t m = 0; m < voxels; ++m) {
            std::uint32_t f1 = sc.tables[i][m];
            grid.occupancy[m] = static_cast<std::uint8_t>(
                ans::pop(state, ans::QuantizedCdf({ans::kProbScale - f1, f1})));
        }
        grids.push_back(std::move(grid));
    }
    return grids;
}

inline std::uint64_t seq_payload_bits(const SeqCompressed& sc) {
    std::uint64_t bits = 0;
    for (const auto& p : sc.payloads) bits += 32 * static_cast<std::uint64_t>(p.size());
    return bits;
}

// Decoder-side storage: B tables of 2^(3d) entries each.
inline std::uint64_t seq_overhead_bytes(std::uint64_t batch_count, int depth,
                                        std::uint64_t bytes_per_entry) {
    return batch_count * (std::uint64_t{1} << (3 * depth)) * bytes_per_entry;
}

}  // namespace pcbb::seqcodec

#endif  // PCBB_SEQCODEC_HPP
