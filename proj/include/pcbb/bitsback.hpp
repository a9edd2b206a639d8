#ifndef PCBB_BITSBACK_HPP
#define PCBB_BITSBACK_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "pcbb/ans.hpp"
#include "pcbb/cvae.hpp"
#include "pcbb/errors.hpp"
#include "pcbb/geometry.hpp"

namespace pcbb::bitsback {

inline constexpr std::uint16_t kContainerVersion = 1;

struct CompressedContainer {
    std::uint16_t version = kContainerVersion;
    std::uint8_t depth = 0;
    std::uint8_t p_bits = 0;
    std::uint16_t latent_dim = 0;
    std::uint32_t batch_count = 0;
    std::uint64_t total_points = 0;
    std::uint64_t seed = 0;
    std::uint32_t seeded_word_count = 0;
    std::uint64_t model_hash = 0;
    std::vector<std::uint32_t> payload;

    // Accounting only, not serialized.
    std::vector<double> per_cloud_net_bits;
};

struct CodeLengthReport {
    std::uint64_t total_bits = 0;
    std::uint64_t initial_bits = 0;
    std::int64_t net_bits = 0;
    double bpp = 0.0;
    std::vector<double> per_cloud_net_bits;
};

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::vector<std::uint32_t> seed_words(std::uint64_t seed, std::size_t count) {
    std::vector<std::uint32_t> words(count);
    std::uint64_t s = seed;
    for (auto& w : words) w = static_cast<std::uint32_t>(splitmix64(s));
    return words;
}

// Enough seeded words that the first cloud's posterior pops can never
// underflow: each pop consumes at most 16 bits.
inline std::size_t min_seed_word_count(std::size_t latent_dim) {
    return 4 + (latent_dim * 16 + 31) / 32;
}

// One bits-back encode step: pop the latent under the posterior, push the
// voxels under the likelihood (reverse raster order), push the latent under
// the uniform prior (reverse dimension order).
inline void bb_encode_one(ans::AnsState& state, const geometry::VoxelGrid& grid,
                          const cvae::CvaeModel& model, const ans::GaussianBuckets& buckets) {
    cvae::PosteriorParams pp = cvae::posterior(model, grid);
    const std::size_t latent = pp.mu.size();
    std::vector<std::size_t> indices(latent);
    for (std::size_t j = 0; j < latent; ++j) {
        double sigma = std::exp(0.5 * pp.log_var[j]);
        auto cdf = ans::gaussian_bucket_cdf_posterior(pp.mu[j], sigma, buckets);
        try {
            indices[j] = ans::pop(state, cdf);
        } catch (const CodecError&) {
            throw CodecError("bb_encode_one: insufficient initial bits for latent pop " +
                             std::to_string(j));
        }
    }
    std::vector<double> z(latent);
    for (std::size_t j = 0; j < latent; ++j) z[j] = buckets.center(indices[j]);

    cvae::VoxelProbs probs = cvae::likelihood(model, z);
    for (std::size_t m = grid.occupancy.size(); m-- > 0;) {
        ans::push(state, grid.occupancy[m], ans::bernoulli_cdf(probs.p[m]));
    }
    auto prior = ans::gaussian_bucket_cdf_prior(buckets);
    for (std::size_t j = latent; j-- > 0;) ans::push(state, indices[j], prior);
}

// Exact inverse of bb_encode_one.
inline geometry::VoxelGrid bb_decode_one(ans::AnsState& state, const cvae::CvaeModel& model,
                                         const ans::GaussianBuckets& buckets) {
    const std::size_t latent = model.latent_dim();
    auto prior = ans::gaussian_bucket_cdf_prior(buckets);
    std::vector<std::size_t> indices(latent);
    for (std::size_t j = 0; j < latent; ++j) indices[j] = ans::pop(state, prior);

    std::vector<double> z(latent);
    for (std::size_t j = 0; j < latent; ++j) z[j] = buckets.center(indices[j]);
    cvae::VoxelProbs probs = cvae::likelihood(model, z);

    geometry::VoxelGrid grid;
    grid.depth = model.depth();
    grid.occupancy.resize(model.schedule().voxel_count());
    for (std::size_t m = 0; m < grid.occupancy.size(); ++m) {
        grid.occupancy[m] =
            static_cast<std::uint8_t>(ans::pop(state, ans::bernoulli_cdf(probs.p[m])));
    }

    cvae::PosteriorParams pp = cvae::posterior(model, grid);
    for (std::size_t j = latent; j-- > 0;) {
        double sigma = std::exp(0.5 * pp.log_var[j]);
        ans::push(state, indices[j],
                  ans::gaussian_bucket_cdf_posterior(pp.mu[j], sigma, buckets));
    }
    return grid;
}

inline CompressedContainer compress_grids(const std::vector<geometry::VoxelGrid>& grids,
                                          const cvae::CvaeModel& model, unsigned p_bits,
                                          std::uint64_t seed, std::uint64_t total_points) {
    if (grids.empty()) throw InvalidInputError("compress: empty batch");
    for (const auto& g : grids) {
        if (g.depth != model.depth()) {
            throw ConfigError("compress: mixed or mismatched grid depths");
        }
    }
    ans::GaussianBuckets buckets(p_bits);
    CompressedContainer c;
    c.depth = static_cast<std::uint8_t>(model.depth());
    c.p_bits = static_cast<std::uint8_t>(p_bits);
    c.latent_dim = static_cast<std::uint16_t>(model.latent_dim());
    c.batch_count = static_cast<std::uint32_t>(grids.size());
    c.total_points = total_points;
    c.seed = seed;
    c.seeded_word_count = static_cast<std::uint32_t>(min_seed_word_count(model.latent_dim()));
    c.model_hash = cvae::model_hash(model);

    ans::AnsState state = ans::init_state(seed_words(seed, c.seeded_word_count));
    for (const auto& grid : grids) {
        const std::uint64_t before = ans::total_bits(state);
        bb_encode_one(state, grid, model, buckets);
        c.per_cloud_net_bits.push_back(static_cast<double>(ans::total_bits(state)) -
                                       static_cast<double>(before));
    }
    c.payload = ans::flush(state);
    return c;
}

inline CompressedContainer compress_batch(const std::vector<geometry::PointCloud>& clouds,
                                          const cvae::CvaeModel& model, int depth,
                                          unsigned p_bits, std::uint64_t seed) {
    if (depth != model.depth()) {
        throw ConfigError("compress: requested depth " + std::to_string(depth) +
                          " != model depth " + std::to_string(model.depth()));
    }
    std::vector<geometry::VoxelGrid> grids;
    std::uint64_t total_points = 0;
    for (const auto& pc : clouds) {
        grids.push_back(geometry::voxelize(pc, depth));
        total_points += pc.size();
    }
    return compress_grids(grids, model, p_bits, seed, total_points);
}

inline std::vector<geometry::VoxelGrid> decompress_batch(const CompressedContainer& c,
                                                         const cvae::CvaeModel& model) {
    if (c.model_hash != cvae::model_hash(model)) {
        throw CodecError("decompress: model hash mismatch, refusing to decode");
    }
    if (c.depth != model.depth() || c.latent_dim != model.latent_dim()) {
        throw ConfigError("decompress: container/model geometry mismatch");
    }
    if (c.payload.empty() || c.batch_count < 1) {
        throw FormatError("decompress: empty container");
    }
    ans::GaussianBuckets buckets(c.p_bits);
    ans::AnsState state = ans::restore(c.payload);
    std::vector<geometry::VoxelGrid> grids(c.batch_count);
    for (std::size_t i = c.batch_count; i-- > 0;) {
        grids[i] = bb_decode_one(state, model, buckets);
    }
    // After a full decode the coder must be back at the seeded state.
    if (!(state == ans::init_state(seed_words(c.seed, c.seeded_word_count)))) {
        throw CodecError("decompress: residual state mismatch, payload corrupt");
    }
    return grids;
}

inline CodeLengthReport report(const CompressedContainer& c) {
    CodeLengthReport r;
    r.total_bits = 32 * static_cast<std::uint64_t>(c.payload.size());
    r.initial_bits = 32 * static_cast<std::uint64_t>(c.seeded_word_count);
    r.net_bits = static_cast<std::int64_t>(r.total_bits) -
                 static_cast<std::int64_t>(r.initial_bits);
    r.bpp = c.total_points > 0
                ? static_cast<double>(r.total_bits) / static_cast<double>(c.total_points)
                : 0.0;
    r.per_cloud_net_bits = c.per_cloud_net_bits;
    return r;
}

// ---- container file format ----

inline void write_container(const CompressedContainer& c, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    std::vector<std::uint8_t> bytes;
    cvae::detail::put_bytes(bytes, "BBPC", 4);
    cvae::detail::put_le<std::uint16_t>(bytes, c.version);
    bytes.push_back(c.depth);
    bytes.push_back(c.p_bits);
    cvae::detail::put_le<std::uint16_t>(bytes, c.latent_dim);
    cvae::detail::put_le<std::uint32_t>(bytes, c.batch_count);
    cvae::detail::put_le<std::uint64_t>(bytes, c.total_points);
    cvae::detail::put_le<std::uint64_t>(bytes, c.seed);
    cvae::detail::put_le<std::uint32_t>(bytes, c.seeded_word_count);
    cvae::detail::put_le<std::uint64_t>(bytes, c.model_hash);
    cvae::detail::put_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(c.payload.size()));
    for (std::uint32_t w : c.payload) cvae::detail::put_le<std::uint32_t>(bytes, w);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path);
}

inline CompressedContainer read_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    cvae::detail::ByteReader r(bytes.data(), bytes.size());
    try {
        char magic[4];
        r.get_bytes(magic, 4);
        if (std::memcmp(magic, "BBPC", 4) != 0) throw FormatError("bad container magic");
        CompressedContainer c;
        c.version = r.get_le<std::uint16_t>();
        if (c.version != kContainerVersion) {
            throw FormatError("unsupported container version");
        }
        c.depth = r.get_le<std::uint8_t>();
        c.p_bits = r.get_le<std::uint8_t>();
        c.latent_dim = r.get_le<std::uint16_t>();
        c.batch_count = r.get_le<std::uint32_t>();
        c.total_points = r.get_le<std::uint64_t>();
        c.seed = r.get_le<std::uint64_t>();
        c.seeded_word_count = r.get_le<std::uint32_t>();
        c.model_hash = r.get_le<std::uint64_t>();
        const std::uint32_t n = r.get_le<std::uint32_t>();
        c.payload.resize(n);
        for (std::uint32_t i = 0; i < n; ++i) c.payload[i] = r.get_le<std::uint32_t>();
        return c;
    } catch (const FormatError& e) {
        throw FormatError(std::string(e.what()) + ": " + path);
    }
}

}  // namespace pcbb::bitsback

#endif  // PCBB_BITSBACK_HPP
