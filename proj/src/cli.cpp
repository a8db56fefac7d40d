#include "msit/cli.hpp"

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "msit/config.hpp"
#include "msit/image_io.hpp"
#include "msit/model.hpp"
#include "msit/snapshot.hpp"
#include "msit/trainer.hpp"

namespace msit::cli {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitConsistency = 3;

struct CliInputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CliConsistencyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string fnv1a64_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CliInputError("cannot hash missing file " + path);
    std::uint64_t h = 1469598103934665603ull;
    char buf[4096];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
        for (std::streamsize i = 0; i < is.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
        if (!is) break;
    }
    char hex[32];
    std::snprintf(hex, sizeof(hex), "fnv1a64:%016llx", static_cast<unsigned long long>(h));
    return hex;
}

// every command emits one of these next to its primary artifact
class RunManifest {
public:
    RunManifest(std::string command) : command_(std::move(command)), start_(clock_t::now()) {}

    void set_config(const std::string& path) { config_ = path; }
    void set_seed(std::uint64_t seed) {
        seed_ = std::to_string(seed);
    }
    void add_input(const std::string& path) { inputs_.push_back(path); }
    void add_output(const std::string& path) { outputs_.push_back(path); }

    void write(const std::string& path) const {
        std::ofstream os(path, std::ios::trunc);
        if (!os) throw CliInputError("cannot write manifest " + path);
        const auto wall =
            std::chrono::duration_cast<std::chrono::milliseconds>(clock_t::now() - start_).count();
        os << "command " << command_ << "\n";
        os << "config " << (config_.empty() ? "-" : config_) << "\n";
        os << "seed " << (seed_.empty() ? "-" : seed_) << "\n";
        for (const auto& in : inputs_) os << "input " << in << "\n";
        for (const auto& out : outputs_)
            os << "output " << out << " " << fnv1a64_file(out) << "\n";
        os << "wall_ms " << wall << "\n";
    }

private:
    using clock_t = std::chrono::steady_clock;
    std::string command_;
    std::string config_;
    std::string seed_;
    std::vector<std::string> inputs_;
    std::vector<std::string> outputs_;
    clock_t::time_point start_;
};

void parse_scale(const std::string& text, double& sh, double& sw) {
    const std::size_t comma = text.find(',');
    try {
        if (comma == std::string::npos) {
            sh = sw = std::stod(text);
        } else {
            sh = std::stod(text.substr(0, comma));
            sw = std::stod(text.substr(comma + 1));
        }
    } catch (const std::exception&) {
        throw CliInputError("bad --scale value '" + text + "'");
    }
    if (sh <= 0.0 || sw <= 0.0) throw CliInputError("scale must be positive");
}

config::FileConfig load_config(const std::string& path) {
    try {
        return config::parse_file(path);
    } catch (const config::ConfigError& e) {
        throw CliInputError(e.what());
    } catch (const std::exception& e) {
        throw CliInputError(e.what());
    }
}

pipeline::SrModel load_snapshot(const std::string& path) {
    snapshot::RawSnapshot raw;
    try {
        raw = snapshot::read_raw(path);
    } catch (const std::exception& e) {
        throw CliInputError(e.what());
    }
    try {
        return snapshot::from_raw(raw);
    } catch (const std::exception& e) {
        throw CliConsistencyError(e.what());
    }
}

Tensor load_image(const std::string& path) {
    try {
        return imageio::read_ppm(path);
    } catch (const std::exception& e) {
        throw CliInputError(e.what());
    }
}

std::vector<Tensor> load_data_dir(const std::string& dir, RunManifest& manifest) {
    namespace fs = std::filesystem;
    std::vector<std::string> paths;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(dir, ec))
        if (entry.is_regular_file() && entry.path().extension() == ".ppm")
            paths.push_back(entry.path().string());
    if (ec) throw CliInputError("cannot read data directory " + dir);
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw CliInputError("no .ppm images found in " + dir);
    std::vector<Tensor> images;
    for (const auto& p : paths) {
        images.push_back(load_image(p));
        manifest.add_input(p);
    }
    return images;
}

void check_model_sections_match(const config::FileConfig& a, const config::FileConfig& b) {
    if (!(a.model == b.model))
        throw CliConsistencyError("the two configs disagree on the model section");
}

void check_snapshot_matches_config(const pipeline::SrModel& model,
                                   const pipeline::ModelConfig& cfg) {
    if (!(model.cfg == cfg))
        throw CliConsistencyError("snapshot model configuration does not match the config file");
}

int cmd_upsample(const std::string& model_path, const std::string& in_path,
                 const std::string& scale_text, const std::string& out_path,
                 const std::string& error_map_path, const std::string& ref_path,
                 std::string manifest_path, std::ostream& out) {
    RunManifest manifest("upsample");
    double sh = 0.0, sw = 0.0;
    parse_scale(scale_text, sh, sw);
    if (!error_map_path.empty() && ref_path.empty())
        throw CliInputError("--error-map requires --ref");

    pipeline::SrModel model = load_snapshot(model_path);
    manifest.add_input(model_path);
    manifest.set_seed(model.seed);
    Tensor img = load_image(in_path);
    manifest.add_input(in_path);

    Tensor sr;
    try {
        sr = pipeline::assr_forward(model, img, sh, sw);
    } catch (const std::exception& e) {
        throw CliConsistencyError(e.what());
    }
    imageio::write_ppm(sr, out_path);
    manifest.add_output(out_path);

    if (!ref_path.empty()) {
        Tensor ref = load_image(ref_path);
        manifest.add_input(ref_path);
        if (!ref.same_shape(sr))
            throw CliConsistencyError("--ref shape does not match the upsampled output");
        // metric computed on the quantized image actually written
        Tensor written = imageio::read_ppm(out_path);
        out << "psnr_db=" << pipeline::psnr(written, ref) << "\n";
        if (!error_map_path.empty()) {
            imageio::write_pgm(pipeline::error_map(written, ref), error_map_path);
            manifest.add_output(error_map_path);
        }
    }

    if (manifest_path.empty()) manifest_path = out_path + ".run.txt";
    manifest.write(manifest_path);
    return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_path, const std::string& init_path, std::string loss_csv,
              std::string manifest_path, std::ostream& out) {
    RunManifest manifest("train");
    manifest.set_config(config_path);
    config::FileConfig cfg = load_config(config_path);
    manifest.set_seed(cfg.train.seed);
    std::vector<Tensor> images = load_data_dir(data_dir, manifest);

    pipeline::SrModel model;
    if (cfg.train.stage == reparam::StageTag::stage2_rim) {
        if (init_path.empty())
            throw CliInputError("stage2 training requires --init with a stage1 snapshot");
        model = load_snapshot(init_path);
        manifest.add_input(init_path);
        check_snapshot_matches_config(model, cfg.model);
        if (model.stage != reparam::StageTag::stage1_plain)
            throw CliConsistencyError("--init snapshot is not a stage1 model");
        reparam::wrap_model_with_rim(model);
    } else {
        model = pipeline::build_model(cfg.model, cfg.train.seed);
    }

    auto history = trainer::train_micro(model, images, cfg.train);
    snapshot::save(model, out_path);
    manifest.add_output(out_path);
    if (loss_csv.empty()) loss_csv = out_path + ".loss.csv";
    trainer::write_history_csv(history, loss_csv);
    manifest.add_output(loss_csv);

    if (!history.empty())
        out << "steps=" << history.size() << " first_loss=" << history.front().loss
            << " last_loss=" << history.back().loss << "\n";
    if (manifest_path.empty()) manifest_path = out_path + ".run.txt";
    manifest.write(manifest_path);
    return kExitOk;
}

int cmd_cumulative(const std::string& config1_path, const std::string& config2_path,
                   const std::string& data_dir, const std::string& out_path,
                   std::string manifest_path, std::ostream& out) {
    RunManifest manifest("cumulative");
    manifest.set_config(config1_path);
    config::FileConfig cfg1 = load_config(config1_path);
    config::FileConfig cfg2 = load_config(config2_path);
    check_model_sections_match(cfg1, cfg2);
    manifest.set_seed(cfg1.train.seed);
    std::vector<Tensor> images = load_data_dir(data_dir, manifest);

    trainer::CumulativeResult result;
    try {
        result = trainer::cumulative_schedule(cfg1.model, cfg1.train.seed, images, cfg1.train,
                                              cfg2.train);
    } catch (const std::invalid_argument& e) {
        throw CliInputError(e.what());
    }

    snapshot::save(result.folded, out_path);
    manifest.add_output(out_path);
    snapshot::save(result.stage1, out_path + ".stage1");
    manifest.add_output(out_path + ".stage1");
    snapshot::save(result.stage2, out_path + ".stage2");
    manifest.add_output(out_path + ".stage2");
    trainer::write_history_csv(result.history1, out_path + ".stage1.loss.csv");
    manifest.add_output(out_path + ".stage1.loss.csv");
    trainer::write_history_csv(result.history2, out_path + ".stage2.loss.csv");
    manifest.add_output(out_path + ".stage2.loss.csv");

    out << "stage1_steps=" << result.history1.size() << " stage2_steps=" << result.history2.size()
        << "\n";
    if (manifest_path.empty()) manifest_path = out_path + ".run.txt";
    manifest.write(manifest_path);
    return kExitOk;
}

int cmd_gradcheck(const std::string& config_path, std::string manifest_path, std::ostream& out) {
    RunManifest manifest("gradcheck");
    manifest.set_config(config_path);
    config::FileConfig cfg = load_config(config_path);
    manifest.set_seed(cfg.train.seed);

    pipeline::SrModel model = pipeline::build_model(cfg.model, cfg.train.seed);
    if (cfg.train.stage == reparam::StageTag::stage2_rim) reparam::wrap_model_with_rim(model);

    // deterministic synthetic batch: the check needs gradients, not data
    Rng rng(cfg.train.seed + 1);
    const int side = cfg.train.patch_lr * 2;
    Tensor img(1, 3, side, side);
    for (std::size_t i = 0; i < img.numel(); ++i) img.data()[i] = rng.uniform();
    std::vector<trainer::PatchSample> batch{
        trainer::sample_patch_pair(img, 2.0, cfg.train.patch_lr, rng, false)};

    Rng crng(cfg.train.seed + 2);
    auto report = trainer::grad_check(model, batch, cfg.grad_samples, 1e-4, crng);
    for (const auto& [module, err] : report.per_module)
        out << "module " << module << " max_rel_err=" << err << "\n";
    out << "scalars_checked=" << report.scalars_checked << "\n";
    out << "max_rel_err=" << report.max_rel_err << "\n";

    if (manifest_path.empty()) manifest_path = "gradcheck.run.txt";
    manifest.write(manifest_path);
    return kExitOk;
}

int cmd_params(const std::string& model_path, std::string manifest_path, std::ostream& out) {
    RunManifest manifest("params");
    snapshot::RawSnapshot raw;
    try {
        raw = snapshot::read_raw(model_path);
    } catch (const std::exception& e) {
        throw CliInputError(e.what());
    }
    manifest.add_input(model_path);

    std::vector<std::pair<std::string, std::int64_t>> rows;
    std::int64_t total = 0, trainable = 0;
    for (const auto& r : raw.records) {
        const std::string module = r.name.substr(0, r.name.find('.'));
        const auto n = static_cast<std::int64_t>(static_cast<std::size_t>(r.shape[0]) * r.shape[1] *
                                                 r.shape[2] * r.shape[3]);
        auto it = std::find_if(rows.begin(), rows.end(),
                               [&](const auto& row) { return row.first == module; });
        if (it == rows.end()) rows.emplace_back(module, n);
        else it->second += n;
        total += n;
        if (r.trainable) trainable += n;
    }
    for (const auto& [module, n] : rows) out << module << " " << n << "\n";
    out << "total " << total << "\n";
    out << "trainable " << trainable << "\n";

    if (manifest_path.empty()) manifest_path = "params.run.txt";
    manifest.write(manifest_path);
    return kExitOk;
}

} // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"arbitrary-scale super-resolution toolkit"};
    app.require_subcommand(1);

    std::string model_path, in_path, out_path, scale_text, error_map_path, ref_path;
    std::string config_path, config2_path, data_dir, init_path, loss_csv, manifest_path;

    auto* upsample = app.add_subcommand("upsample", "upsample an image at an arbitrary scale");
    upsample->add_option("--model", model_path, "weight snapshot")->required();
    upsample->add_option("--in", in_path, "input PPM image")->required();
    upsample->add_option("--scale", scale_text, "scale factor s or s_h,s_w")->required();
    upsample->add_option("--out", out_path, "output PPM image")->required();
    upsample->add_option("--error-map", error_map_path, "write a PGM error map (needs --ref)");
    upsample->add_option("--ref", ref_path, "reference PPM for PSNR/error map");
    upsample->add_option("--manifest", manifest_path, "run manifest path");

    auto* train = app.add_subcommand("train", "train a model on a directory of PPM images");
    train->add_option("--config", config_path, "key=value config file")->required();
    train->add_option("--data", data_dir, "directory of .ppm images")->required();
    train->add_option("--out", out_path, "output snapshot")->required();
    train->add_option("--init", init_path, "stage1 snapshot to wrap for stage2 training");
    train->add_option("--loss-csv", loss_csv, "loss history CSV path");
    train->add_option("--manifest", manifest_path, "run manifest path");

    auto* cumulative = app.add_subcommand("cumulative", "two-stage schedule: train, wrap, train, fold");
    cumulative->add_option("--config1", config_path, "stage1 config")->required();
    cumulative->add_option("--config2", config2_path, "stage2 config")->required();
    cumulative->add_option("--data", data_dir, "directory of .ppm images")->required();
    cumulative->add_option("--out", out_path, "folded snapshot path")->required();
    cumulative->add_option("--manifest", manifest_path, "run manifest path");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gradcheck->add_option("--config", config_path, "key=value config file")->required();
    gradcheck->add_option("--manifest", manifest_path, "run manifest path");

    auto* params = app.add_subcommand("params", "parameter counts of a snapshot");
    params->add_option("--model", model_path, "weight snapshot")->required();
    params->add_option("--manifest", manifest_path, "run manifest path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitInput;
    }

    try {
        if (upsample->parsed())
            return cmd_upsample(model_path, in_path, scale_text, out_path, error_map_path,
                                ref_path, manifest_path, out);
        if (train->parsed())
            return cmd_train(config_path, data_dir, out_path, init_path, loss_csv, manifest_path,
                             out);
        if (cumulative->parsed())
            return cmd_cumulative(config_path, config2_path, data_dir, out_path, manifest_path,
                                  out);
        if (gradcheck->parsed()) return cmd_gradcheck(config_path, manifest_path, out);
        if (params->parsed()) return cmd_params(model_path, manifest_path, out);
    } catch (const CliInputError& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const CliConsistencyError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConsistency;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
    }
    return kExitInput;
}

} // namespace msit::cli
