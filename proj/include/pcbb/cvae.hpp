#ifndef PCBB_CVAE_HPP
#define PCBB_CVAE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "pcbb/autodiff.hpp"
#include "pcbb/errors.hpp"
#include "pcbb/geometry.hpp"
#include "pcbb/tensor.hpp"

namespace pcbb::cvae {

using nn::Tensor;

struct ConvSpec {
    std::size_t in_channels;
    std::size_t out_channels;
    std::size_t kernel;
    std::size_t stride;
    std::size_t padding;
};

// Layer schedule of the posterior net; the likelihood net mirrors it with
// transposed convolutions. Channel and feature counts follow the
// conv(1->8->16->32) -> flat -> 500 -> 50 ladder; depths above 5 widen the
// first stride so the flattened feature count stays at 2048.
struct CvaeSchedule {
    int depth = 0;
    std::size_t latent_dim = 50;
    std::size_t hidden_dim = 500;
    std::vector<ConvSpec> conv;

    std::size_t conv_out_side() const {
        std::size_t side = std::size_t{1} << depth;
        for (const ConvSpec& c : conv)
            side = nn::conv_out_dim(side, c.kernel, c.stride, c.padding);
        return side;
    }

    std::size_t flat_features() const {
        std::size_t s = conv_out_side();
        return conv.back().out_channels * s * s * s;
    }

    std::size_t voxel_count() const { return std::size_t{1} << (3 * depth); }
};

inline CvaeSchedule default_schedule(int depth, std::size_t latent_dim = 50,
                                     std::size_t hidden_dim = 500) {
    if (depth < 3 || depth > 7) {
        throw ConfigError("cvae: supported depths are 3..7, got " + std::to_string(depth));
    }
    CvaeSchedule s;
    s.depth = depth;
    s.latent_dim = latent_dim;
    s.hidden_dim = hidden_dim;
    switch (depth) {
        case 6:
            s.conv = {{1, 8, 4, 4, 0}, {8, 16, 4, 2, 1}, {16, 32, 4, 2, 1}};
            break;
        case 7:
            s.conv = {{1, 8, 8, 8, 0}, {8, 16, 4, 2, 1}, {16, 32, 4, 2, 1}};
            break;
        default:  // 3, 4, 5: halve the side three times
            s.conv = {{1, 8, 4, 2, 1}, {8, 16, 4, 2, 1}, {16, 32, 4, 2, 1}};
            break;
    }
    return s;
}

struct PosteriorParams {
    std::vector<double> mu;
    std::vector<double> log_var;
};

struct VoxelProbs {
    std::vector<double> p;
};

struct ElboParts {
    double loss = 0.0;      // -(recon_ll - kl), nats
    double recon_ll = 0.0;  // <= 0, nats
    double kl = 0.0;        // >= 0, nats

    double loss_bits() const { return loss / std::log(2.0); }
};

class CvaeModel {
public:
    CvaeModel() = default;

    CvaeModel(CvaeSchedule schedule, std::uint64_t init_seed)
        : schedule_(std::move(schedule)) {
        build_layers();
        std::mt19937_64 rng(init_seed);
        for (nn::LayerParams* lp : layer_list()) init_layer(*lp, rng);
        quantize_params();
    }

    const CvaeSchedule& schedule() const { return schedule_; }
    int depth() const { return schedule_.depth; }
    std::size_t latent_dim() const { return schedule_.latent_dim; }

    std::vector<nn::LayerParams*> layer_list() {
        std::vector<nn::LayerParams*> out;
        for (auto& l : enc_conv_) out.push_back(&l);
        out.push_back(&enc_fc_);
        out.push_back(&mu_head_);
        out.push_back(&logvar_head_);
        out.push_back(&dec_fc1_);
        out.push_back(&dec_fc2_);
        for (auto& l : dec_conv_) out.push_back(&l);
        return out;
    }

    std::vector<const nn::LayerParams*> layer_list() const {
        auto mutable_list = const_cast<CvaeModel*>(this)->layer_list();
        return {mutable_list.begin(), mutable_list.end()};
    }

    std::vector<Tensor*> parameters() {
        std::vector<Tensor*> out;
        for (nn::LayerParams* l : layer_list()) {
            out.push_back(&l->weight);
            out.push_back(&l->bias);
        }
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const nn::LayerParams* l : layer_list()) n += l->weight.size() + l->bias.size();
        return n;
    }

    // Rounds every parameter through float32, the serialized precision, so
    // in-memory and deserialized models run bit-identical forward passes.
    void quantize_params() {
        for (Tensor* t : parameters())
            for (std::size_t i = 0; i < t->size(); ++i)
                (*t)[i] = static_cast<double>(static_cast<float>((*t)[i]));
    }

    // Accessors used by graph construction and serialization.
    const std::vector<nn::LayerParams>& enc_conv() const { return enc_conv_; }
    const nn::LayerParams& enc_fc() const { return enc_fc_; }
    const nn::LayerParams& mu_head() const { return mu_head_; }
    const nn::LayerParams& logvar_head() const { return logvar_head_; }
    const nn::LayerParams& dec_fc1() const { return dec_fc1_; }
    const nn::LayerParams& dec_fc2() const { return dec_fc2_; }
    const std::vector<nn::LayerParams>& dec_conv() const { return dec_conv_; }

private:
    void build_layers() {
        const std::size_t flat = schedule_.flat_features();
        for (const ConvSpec& c : schedule_.conv) {
            nn::LayerParams p;
            p.kind = nn::LayerKind::Conv3d;
            p.in_channels = c.in_channels;
            p.out_channels = c.out_channels;
            p.kernel = c.kernel;
            p.stride = c.stride;
            p.padding = c.padding;
            p.weight = Tensor({c.out_channels, c.in_channels, c.kernel, c.kernel, c.kernel});
            p.bias = Tensor({c.out_channels});
            enc_conv_.push_back(std::move(p));
        }
        enc_fc_ = make_linear(flat, schedule_.hidden_dim);
        mu_head_ = make_linear(schedule_.hidden_dim, schedule_.latent_dim);
        logvar_head_ = make_linear(schedule_.hidden_dim, schedule_.latent_dim);
        dec_fc1_ = make_linear(schedule_.latent_dim, schedule_.hidden_dim);
        dec_fc2_ = make_linear(schedule_.hidden_dim, flat);
        for (auto it = schedule_.conv.rbegin(); it != schedule_.conv.rend(); ++it) {
            nn::LayerParams p;
            p.kind = nn::LayerKind::ConvTranspose3d;
            p.in_channels = it->out_channels;
            p.out_channels = it->in_channels;
            p.kernel = it->kernel;
            p.stride = it->stride;
            p.padding = it->padding;
            p.weight = Tensor({p.in_channels, p.out_channels, p.kernel, p.kernel, p.kernel});
            p.bias = Tensor({p.out_channels});
            dec_conv_.push_back(std::move(p));
        }
    }

    static nn::LayerParams make_linear(std::size_t in, std::size_t out) {
        nn::LayerParams p;
        p.kind = nn::LayerKind::Linear;
        p.in_channels = in;
        p.out_channels = out;
        p.weight = Tensor({out, in});
        p.bias = Tensor({out});
        return p;
    }

    static void init_layer(nn::LayerParams& p, std::mt19937_64& rng) {
        std::size_t fan_in = 0;
        switch (p.kind) {
            case nn::LayerKind::Linear: fan_in = p.in_channels; break;
            case nn::LayerKind::Conv3d:
                fan_in = p.in_channels * p.kernel * p.kernel * p.kernel;
                break;
            case nn::LayerKind::ConvTranspose3d:
                fan_in = p.in_channels * p.kernel * p.kernel * p.kernel;
                break;
        }
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        for (std::size_t i = 0; i < p.weight.size(); ++i) p.weight[i] = dist(rng);
        // biases start at zero
    }

    CvaeSchedule schedule_;
    std::vector<nn::LayerParams> enc_conv_;
    nn::LayerParams enc_fc_;
    nn::LayerParams mu_head_;
    nn::LayerParams logvar_head_;
    nn::LayerParams dec_fc1_;
    nn::LayerParams dec_fc2_;
    std::vector<nn::LayerParams> dec_conv_;
};

inline Tensor grid_to_tensor(const geometry::VoxelGrid& grid) {
    const std::size_t s = grid.side();
    Tensor t({1, s, s, s});
    for (std::size_t i = 0; i < grid.occupancy.size(); ++i)
        t[i] = static_cast<double>(grid.occupancy[i]);
    return t;
}

inline PosteriorParams posterior(const CvaeModel& model, const geometry::VoxelGrid& grid) {
    if (grid.depth != model.depth()) {
        throw ConfigError("posterior: grid depth " + std::to_string(grid.depth) +
                          " != model depth " + std::to_string(model.depth()));
    }
    Tensor x = grid_to_tensor(grid);
    for (const nn::LayerParams& l : model.enc_conv()) {
        x = nn::conv3d_forward(x, l);
        x = nn::activation(x, nn::Activation::Relu);
    }
    x = x.reshaped({x.size()});
    x = nn::activation(nn::linear_forward(x, model.enc_fc()), nn::Activation::Relu);
    Tensor mu = nn::linear_forward(x, model.mu_head());
    Tensor lv = nn::linear_forward(x, model.logvar_head());
    PosteriorParams pp;
    pp.mu.assign(mu.data(), mu.data() + mu.size());
    pp.log_var.assign(lv.data(), lv.data() + lv.size());
    return pp;
}

inline std::vector<double> sample_latent(const PosteriorParams& pp,
                                         const std::vector<double>& noise) {
    if (noise.size() != pp.mu.size()) {
        throw ShapeError("sample_latent: noise length " + std::to_string(noise.size()) +
                         " != latent dim " + std::to_string(pp.mu.size()));
    }
    std::vector<double> z(pp.mu.size());
    for (std::size_t i = 0; i < z.size(); ++i)
        z[i] = pp.mu[i] + std::exp(0.5 * pp.log_var[i]) * noise[i];
    return z;
}

// Decoder logits for a latent vector; sigmoid is applied by likelihood().
inline Tensor decoder_logits(const CvaeModel& model, const std::vector<double>& z) {
    if (z.size() != model.latent_dim()) {
        throw ShapeError("likelihood: latent length " + std::to_string(z.size()) +
                         " != latent dim " + std::to_string(model.latent_dim()));
    }
    Tensor x({z.size()}, std::vector<double>(z.begin(), z.end()));
    x = nn::activation(nn::linear_forward(x, model.dec_fc1()), nn::Activation::Relu);
    x = nn::activation(nn::linear_forward(x, model.dec_fc2()), nn::Activation::Relu);
    const std::size_t side = model.schedule().conv_out_side();
    const std::size_t ch = model.schedule().conv.back().out_channels;
    x = x.reshaped({ch, side, side, side});
    const auto& dec = model.dec_conv();
    for (std::size_t i = 0; i < dec.size(); ++i) {
        x = nn::conv_transpose3d_forward(x, dec[i]);
        if (i + 1 < dec.size()) x = nn::activation(x, nn::Activation::Relu);
    }
    return x.reshaped({x.size()});
}

inline VoxelProbs likelihood(const CvaeModel& model, const std::vector<double>& z) {
    Tensor logits = decoder_logits(model, z);
    VoxelProbs probs;
    probs.p.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        double p = nn::Graph::stable_sigmoid(logits[i]);
        probs.p[i] = std::clamp(p, 1e-12, 1.0 - 1e-12);
    }
    return probs;
}

// Node handles of one recorded ELBO evaluation.
struct ElboGraph {
    nn::Graph::NodeId loss;
    nn::Graph::NodeId recon_ll;
    nn::Graph::NodeId kl;
    nn::Graph::NodeId mu;
    nn::Graph::NodeId logvar;
    std::vector<nn::Graph::NodeId> param_nodes;  // aligned with parameters()
};

inline ElboGraph build_elbo_graph(CvaeModel& model, const geometry::VoxelGrid& grid,
                                  const std::vector<double>& noise, nn::Graph& g) {
    if (grid.depth != model.depth()) {
        throw ConfigError("elbo: grid depth " + std::to_string(grid.depth) +
                          " != model depth " + std::to_string(model.depth()));
    }
    if (noise.size() != model.latent_dim()) {
        throw ShapeError("elbo: noise length " + std::to_string(noise.size()) +
                         " != latent dim " + std::to_string(model.latent_dim()));
    }
    ElboGraph eg;
    auto add_layer_nodes = [&](const nn::LayerParams& l) {
        auto w = g.input(l.weight);
        auto b = g.input(l.bias);
        eg.param_nodes.push_back(w);
        eg.param_nodes.push_back(b);
        return std::pair{w, b};
    };

    Tensor xt = grid_to_tensor(grid);
    auto x = g.input(xt);
    for (const nn::LayerParams& l : model.enc_conv()) {
        auto [w, b] = add_layer_nodes(l);
        x = g.relu(g.conv3d(x, w, b, l.in_channels, l.out_channels, l.kernel, l.stride,
                            l.padding));
    }
    x = g.reshape(x, {g.value(x).size()});
    {
        auto [w, b] = add_layer_nodes(model.enc_fc());
        x = g.relu(g.linear(x, w, b));
    }
    auto [wm, bm] = add_layer_nodes(model.mu_head());
    auto mu = g.linear(x, wm, bm);
    auto [wv, bv] = add_layer_nodes(model.logvar_head());
    auto logvar = g.linear(x, wv, bv);

    auto sigma = g.exp(g.scale(logvar, 0.5));
    auto noise_node = g.input(Tensor({noise.size()}, std::vector<double>(noise.begin(),
                                                                         noise.end())));
    auto z = g.add(mu, g.mul(sigma, noise_node));

    auto [w1, b1] = add_layer_nodes(model.dec_fc1());
    auto h = g.relu(g.linear(z, w1, b1));
    auto [w2, b2] = add_layer_nodes(model.dec_fc2());
    h = g.relu(g.linear(h, w2, b2));
    const std::size_t side = model.schedule().conv_out_side();
    const std::size_t ch = model.schedule().conv.back().out_channels;
    h = g.reshape(h, {ch, side, side, side});
    const auto& dec = model.dec_conv();
    for (std::size_t i = 0; i < dec.size(); ++i) {
        const nn::LayerParams& l = dec[i];
        auto [w, b] = add_layer_nodes(l);
        h = g.conv_transpose3d(h, w, b, l.in_channels, l.out_channels, l.kernel, l.stride,
                               l.padding);
        if (i + 1 < dec.size()) h = g.relu(h);
    }
    auto logits = g.reshape(h, {g.value(h).size()});

    eg.recon_ll = g.bernoulli_loglik(logits, xt.reshaped({xt.size()}));
    eg.kl = g.gaussian_kl(mu, logvar);
    eg.loss = g.sub(eg.kl, eg.recon_ll);
    eg.mu = mu;
    eg.logvar = logvar;
    return eg;
}

inline ElboParts elbo(CvaeModel& model, const geometry::VoxelGrid& grid,
                      const std::vector<double>& noise) {
    nn::Graph g;
    ElboGraph eg = build_elbo_graph(model, grid, noise, g);
    ElboParts parts;
    parts.recon_ll = g.value(eg.recon_ll)[0];
    parts.kl = g.value(eg.kl)[0];
    parts.loss = g.value(eg.loss)[0];
    if (!std::isfinite(parts.loss)) throw NumericError("elbo: non-finite loss");
    return parts;
}

struct TrainResult {
    std::vector<double> epoch_loss_bits;  // mean -ELBO per grid, in bits
};

inline TrainResult train(CvaeModel& model, const std::vector<geometry::VoxelGrid>& dataset,
                         std::size_t epochs, double lr, std::size_t batch_size,
                         std::uint64_t seed) {
    if (dataset.empty()) throw InvalidInputError("train: empty dataset");
    for (const auto& grid : dataset) {
        if (grid.depth != model.depth()) {
            throw ConfigError("train: dataset depth mismatch with model depth " +
                              std::to_string(model.depth()));
        }
    }
    if (batch_size == 0) throw InvalidInputError("train: batch_size must be >= 1");

    TrainResult result;
    if (epochs == 0) return result;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<Tensor*> params = model.parameters();
    nn::AdamState adam;
    nn::AdamConfig adam_cfg;
    adam_cfg.lr = lr;

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t end = std::min(start + batch_size, order.size());
            std::vector<Tensor> grad_sum;
            for (Tensor* p : params) grad_sum.emplace_back(p->shape());
            for (std::size_t i = start; i < end; ++i) {
                std::vector<double> noise(model.latent_dim());
                for (double& v : noise) v = gauss(rng);
                nn::Graph g;
                ElboGraph eg = build_elbo_graph(model, dataset[order[i]], noise, g);
                const double loss = g.value(eg.loss)[0];
                if (!std::isfinite(loss)) {
                    throw NumericError("train: non-finite loss at epoch " +
                                       std::to_string(epoch));
                }
                epoch_loss += loss;
                g.backward(eg.loss);
                for (std::size_t j = 0; j < params.size(); ++j)
                    grad_sum[j].add_in_place(g.grad(eg.param_nodes[j]));
            }
            const double inv = 1.0 / static_cast<double>(end - start);
            for (Tensor& gt : grad_sum)
                for (std::size_t j = 0; j < gt.size(); ++j) gt[j] *= inv;
            nn::adam_step(params, grad_sum, adam, adam_cfg);
        }
        result.epoch_loss_bits.push_back(epoch_loss / std::log(2.0) /
                                         static_cast<double>(dataset.size()));
    }
    model.quantize_params();
    return result;
}

// ---- serialization ----

namespace detail {

inline void put_bytes(std::vector<std::uint8_t>& out, const void* src, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(src);
    out.insert(out.end(), p, p + n);
}

template <typename T>
inline void put_le(std::vector<std::uint8_t>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
        out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

inline std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n) {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 1099511628211ULL;
    }
    return h;
}

class ByteReader {
public:
    ByteReader(const std::uint8_t* data, std::size_t n) : data_(data), size_(n) {}

    template <typename T>
    T get_le() {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            v |= static_cast<T>(static_cast<T>(data_[pos_ + i]) << (8 * i));
        pos_ += sizeof(T);
        return v;
    }

    void get_bytes(void* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, data_ + pos_, n);
        pos_ += n;
    }

    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > size_) throw FormatError("model file truncated");
    }
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline constexpr std::uint16_t kModelFormatVersion = 1;

inline std::vector<std::uint8_t> serialize_bytes(const CvaeModel& model) {
    std::vector<std::uint8_t> out;
    detail::put_bytes(out, "CVAE", 4);
    detail::put_le<std::uint16_t>(out, kModelFormatVersion);
    out.push_back(static_cast<std::uint8_t>(model.depth()));
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(model.latent_dim()));
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(model.schedule().hidden_dim));
    const auto& conv = model.schedule().conv;
    out.push_back(static_cast<std::uint8_t>(conv.size()));
    for (const ConvSpec& c : conv) {
        detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(c.in_channels));
        detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(c.out_channels));
        out.push_back(static_cast<std::uint8_t>(c.kernel));
        out.push_back(static_cast<std::uint8_t>(c.stride));
        out.push_back(static_cast<std::uint8_t>(c.padding));
    }
    detail::put_le<std::uint64_t>(out, model.parameter_count());
    for (const nn::LayerParams* l : model.layer_list()) {
        for (const Tensor* t : {&l->weight, &l->bias}) {
            for (std::size_t i = 0; i < t->size(); ++i) {
                float f = static_cast<float>((*t)[i]);
                std::uint32_t bits;
                std::memcpy(&bits, &f, 4);
                detail::put_le<std::uint32_t>(out, bits);
            }
        }
    }
    detail::put_le<std::uint64_t>(out, detail::fnv1a(out.data(), out.size()));
    return out;
}

inline std::uint64_t model_hash(const CvaeModel& model) {
    auto bytes = serialize_bytes(model);
    std::uint64_t h;
    std::memcpy(&h, bytes.data() + bytes.size() - 8, 8);
    return h;
}

inline std::size_t decoder_size_bytes(const CvaeModel& model) {
    return serialize_bytes(model).size();
}

inline void serialize(const CvaeModel& model, const std::string& path) {
    if (path.empty()) throw IoError("serialize: empty path");
    auto bytes = serialize_bytes(model);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path);
}

inline CvaeModel deserialize(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() < 12 + 8) throw FormatError("model file too short");
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
    if (detail::fnv1a(bytes.data(), bytes.size() - 8) != stored) {
        throw FormatError("model file hash mismatch: " + path);
    }
    detail::ByteReader r(bytes.data(), bytes.size() - 8);
    char magic[4];
    r.get_bytes(magic, 4);
    if (std::memcmp(magic, "CVAE", 4) != 0) throw FormatError("bad model magic");
    if (r.get_le<std::uint16_t>() != kModelFormatVersion) {
        throw FormatError("unsupported model format version");
    }
    CvaeSchedule s;
    s.depth = r.get_le<std::uint8_t>();
    s.latent_dim = r.get_le<std::uint16_t>();
    s.hidden_dim = r.get_le<std::uint16_t>();
    const std::size_t n_conv = r.get_le<std::uint8_t>();
    for (std::size_t i = 0; i < n_conv; ++i) {
        ConvSpec c{};
        c.in_channels = r.get_le<std::uint16_t>();
        c.out_channels = r.get_le<std::uint16_t>();
        c.kernel = r.get_le<std::uint8_t>();
        c.stride = r.get_le<std::uint8_t>();
        c.padding = r.get_le<std::uint8_t>();
        s.conv.push_back(c);
    }
    CvaeModel model(s, /*init_seed=*/0);
    const std::uint64_t declared = r.get_le<std::uint64_t>();
    if (declared != model.parameter_count()) {
        throw FormatError("model parameter count mismatch");
    }
    for (nn::LayerParams* l : model.layer_list()) {
        for (Tensor* t : {&l->weight, &l->bias}) {
            for (std::size_t i = 0; i < t->size(); ++i) {
                std::uint32_t bits = r.get_le<std::uint32_t>();
                float f;
                std::memcpy(&f, &bits, 4);
                (*t)[i] = static_cast<double>(f);
            }
        }
    }
    return model;
}

}  // namespace pcbb::cvae

#endif  // PCBB_CVAE_HPP
