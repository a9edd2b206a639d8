// Command-line front end: dataset generation, CVAE training, batch
// compression, and the batch-size / bit-depth sweep harnesses.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pcbb/bench.hpp"
#include "pcbb/bitsback.hpp"
#include "pcbb/cvae.hpp"
#include "pcbb/geometry.hpp"
#include "pcbb/seqcodec.hpp"

namespace fs = std::filesystem;
using namespace pcbb;

namespace {

std::vector<geometry::PointCloud> load_inputs(const std::vector<std::string>& paths,
                                              const std::string& kind, std::size_t clouds,
                                              std::size_t points, std::uint64_t seed) {
    std::vector<geometry::PointCloud> out;
    if (!paths.empty()) {
        for (const auto& p : paths) {
            if (fs::is_directory(p)) {
                std::vector<fs::path> files;
                for (const auto& e : fs::directory_iterator(p))
                    if (e.path().extension() == ".xyz") files.push_back(e.path());
                std::sort(files.begin(), files.end());
                for (const auto& f : files) out.push_back(geometry::load_points(f.string()));
            } else {
                out.push_back(geometry::load_points(p));
            }
        }
    } else {
        auto k = geometry::parse_shape_kind(kind);
        for (std::size_t i = 0; i < clouds; ++i)
            out.push_back(geometry::gen_synthetic(k, points, seed + i));
    }
    if (out.empty()) throw InvalidInputError("no input point clouds");
    return out;
}

int cmd_gen(const std::string& kind, std::size_t clouds, std::size_t points,
            std::uint64_t seed, const std::string& out_dir) {
    auto k = geometry::parse_shape_kind(kind);
    fs::create_directories(out_dir);
    for (std::size_t i = 0; i < clouds; ++i) {
        auto pc = geometry::gen_synthetic(k, points, seed + i);
        char name[32];
        std::snprintf(name, sizeof(name), "cloud_%05zu.xyz", i);
        geometry::save_points(pc, (fs::path(out_dir) / name).string());
    }
    std::cout << "wrote " << clouds << " clouds to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Lossless voxelized point-cloud compression with bits-back coding"};
    app.require_subcommand(1);

    std::string kind = "cluster";
    std::size_t clouds = 200, points = 2000;
    std::uint64_t seed = 1;
    std::string model_path, out_path = "out";
    std::vector<int> depths{4};
    std::vector<std::size_t> batches{1, 10, 100};
    unsigned p_bits = 12;
    std::size_t epochs = 30;
    double lr = 0.001;
    std::size_t train_batch = 16;
    bool verify = false;
    std::vector<std::string> inputs;

    auto add_dataset_opts = [&](CLI::App* sub) {
        sub->add_option("--kind", kind, "synthetic shape family");
        sub->add_option("--clouds", clouds, "number of synthetic clouds");
        sub->add_option("--points", points, "points per cloud");
        sub->add_option("--seed", seed, "RNG seed");
    };

    auto* gen = app.add_subcommand("gen", "generate synthetic point cloud files");
    add_dataset_opts(gen);
    gen->add_option("--out", out_path, "output directory");

    auto* train = app.add_subcommand("train", "train a CVAE entropy model");
    add_dataset_opts(train);
    train->add_option("--depth", depths, "voxel bit-depth");
    train->add_option("--epochs", epochs, "training epochs");
    train->add_option("--lr", lr, "Adam learning rate");
    train->add_option("--batch", train_batch, "training mini-batch size");
    train->add_option("--out", out_path, "model output path")->required();
    train->add_option("--in", inputs, "point files or directories (instead of synthetic)");

    auto* compress = app.add_subcommand("compress", "compress a batch of point clouds");
    add_dataset_opts(compress);
    compress->add_option("--model", model_path, "model file")->required();
    compress->add_option("--pbits", p_bits, "latent discretization bits");
    compress->add_option("--depth", depths, "voxel bit-depth");
    compress->add_option("--in", inputs, "point files or directories");
    compress->add_option("--out", out_path, "container output path")->required();
    compress->add_flag("--verify", verify, "verify round trip after compressing");

    auto* decompress = app.add_subcommand("decompress", "decompress a container");
    decompress->add_option("--model", model_path, "model file")->required();
    decompress->add_option("--in", inputs, "container path")->required();
    decompress->add_option("--out", out_path, "output directory for recovered clouds");
    decompress->add_flag("--verify", verify, "re-encode and compare bit-exactly");

    auto* sweep_b = app.add_subcommand("sweep-batch", "bpp vs batch size, both methods");
    add_dataset_opts(sweep_b);
    sweep_b->add_option("--depth", depths, "voxel bit-depth(s)");
    sweep_b->add_option("--batch", batches, "batch sizes");
    sweep_b->add_option("--pbits", p_bits, "latent discretization bits");
    sweep_b->add_option("--epochs", epochs, "internal training epochs");
    sweep_b->add_option("--model", model_path, "model file (single depth only)");
    sweep_b->add_option("--out", out_path, "CSV output path")->required();

    auto* sweep_d = app.add_subcommand("sweep-depth", "bpp and decoder bytes vs bit-depth");
    add_dataset_opts(sweep_d);
    sweep_d->add_option("--depth", depths, "voxel bit-depths");
    sweep_d->add_option("--batch", batches, "batch size (first entry used)");
    sweep_d->add_option("--pbits", p_bits, "latent discretization bits");
    sweep_d->add_option("--epochs", epochs, "internal training epochs");
    sweep_d->add_option("--out", out_path, "CSV output path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen(kind, clouds, points, seed, out_path);

        if (train->parsed()) {
            auto pcs = load_inputs(inputs, kind, clouds, points, seed);
            std::vector<geometry::VoxelGrid> grids;
            for (const auto& pc : pcs) grids.push_back(geometry::voxelize(pc, depths[0]));
            cvae::CvaeModel model(cvae::default_schedule(depths[0]), seed);
            auto trace = cvae::train(model, grids, epochs, lr, train_batch, seed);
            cvae::serialize(model, out_path);
            if (!trace.epoch_loss_bits.empty()) {
                std::cout << "loss(bits/grid): first=" << trace.epoch_loss_bits.front()
                          << " last=" << trace.epoch_loss_bits.back() << "\n";
            }
            std::cout << "model written to " << out_path << " ("
                      << cvae::decoder_size_bytes(model) << " bytes)\n";
            return 0;
        }

        if (compress->parsed()) {
            auto model = cvae::deserialize(model_path);
            auto pcs = load_inputs(inputs, kind, clouds, points, seed);
            auto container =
                bitsback::compress_batch(pcs, model, model.depth(), p_bits, seed);
            bitsback::write_container(container, out_path);
            auto rep = bitsback::report(container);
            std::cout << "B=" << container.batch_count << " payload_bits=" << rep.total_bits
                      << " bpp=" << rep.bpp << "\n";
            if (verify) {
                auto decoded = bitsback::decompress_batch(container, model);
                bool ok = true;
                for (std::size_t i = 0; i < pcs.size(); ++i)
                    ok = ok && geometry::voxelize(pcs[i], model.depth()) == decoded[i];
                std::cout << "lossless: " << (ok ? "true" : "false") << "\n";
                if (!ok) return 1;
            }
            return 0;
        }

        if (decompress->parsed()) {
            auto model = cvae::deserialize(model_path);
            auto container = bitsback::read_container(inputs.at(0));
            auto grids = bitsback::decompress_batch(container, model);
            fs::create_directories(out_path);
            for (std::size_t i = 0; i < grids.size(); ++i) {
                char name[32];
                std::snprintf(name, sizeof(name), "cloud_%05zu.xyz", i);
                geometry::save_points(geometry::devoxelize(grids[i]),
                                      (fs::path(out_path) / name).string());
            }
            if (verify) {
                auto again = bitsback::compress_grids(grids, model, container.p_bits,
                                                      container.seed, container.total_points);
                bool ok = again.payload == container.payload;
                std::cout << "lossless: " << (ok ? "true" : "false") << "\n";
                if (!ok) return 1;
            }
            std::cout << "recovered " << grids.size() << " clouds to " << out_path << "\n";
            return 0;
        }

        bench::BenchConfig cfg;
        cfg.dataset.kind = geometry::parse_shape_kind(kind);
        cfg.dataset.clouds = clouds;
        cfg.dataset.points = points;
        cfg.dataset.seed = seed;
        cfg.depths = depths;
        cfg.batch_sizes = batches;
        cfg.model_path = model_path;
        cfg.p_bits = p_bits;
        cfg.train_epochs = epochs;
        cfg.seed = seed;
        auto rows = sweep_b->parsed() ? bench::sweep_batch(cfg) : bench::sweep_depth(cfg);
        bench::write_csv(rows, out_path);
        std::cout << "wrote " << rows.size() << " rows to " << out_path << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
