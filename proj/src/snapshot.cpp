#include "msit/snapshot.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace msit::snapshot {

namespace {

constexpr const char* kMagic = "MSITSNAP 1";

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void put_f64_le(std::ostream& os, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    os.write(b, 8);
}

double get_f64_le(std::istream& is) {
    char b[8];
    is.read(b, 8);
    if (!is) throw std::runtime_error("snapshot: truncated payload");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return std::bit_cast<double>(bits);
}

} // namespace

const std::string* RawSnapshot::meta_value(const std::string& key) const {
    for (const auto& [k, v] : meta)
        if (k == key) return &v;
    return nullptr;
}

void write_raw(const RawSnapshot& snap, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("snapshot: cannot open " + path + " for writing");
    os << kMagic << "\n";
    for (const auto& [k, v] : snap.meta) os << "meta " << k << " " << v << "\n";
    for (const auto& r : snap.records) {
        os << "param " << r.name << " " << r.shape[0] << " " << r.shape[1] << " " << r.shape[2]
           << " " << r.shape[3] << " " << (r.trainable ? 1 : 0) << "\n";
    }
    os << "end\n";
    for (const auto& r : snap.records)
        for (double v : r.values) put_f64_le(os, v);
    if (!os) throw std::runtime_error("snapshot: write failed for " + path);
}

RawSnapshot read_raw(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("snapshot: cannot open " + path);
    std::string line;
    if (!std::getline(is, line) || line != kMagic)
        throw std::runtime_error("snapshot: bad magic in " + path);
    RawSnapshot snap;
    while (std::getline(is, line)) {
        if (line == "end") break;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "meta") {
            std::string key, value;
            ls >> key;
            std::getline(ls, value);
            if (!value.empty() && value.front() == ' ') value.erase(0, 1);
            snap.meta.emplace_back(key, value);
        } else if (tag == "param") {
            RawRecord r;
            int trainable = 1;
            ls >> r.name >> r.shape[0] >> r.shape[1] >> r.shape[2] >> r.shape[3] >> trainable;
            if (!ls) throw std::runtime_error("snapshot: malformed record line: " + line);
            r.trainable = trainable != 0;
            snap.records.push_back(std::move(r));
        } else {
            throw std::runtime_error("snapshot: unexpected manifest line: " + line);
        }
    }
    if (line != "end") throw std::runtime_error("snapshot: missing manifest terminator");
    for (auto& r : snap.records) {
        const std::size_t n = static_cast<std::size_t>(r.shape[0]) * r.shape[1] * r.shape[2] *
                              r.shape[3];
        r.values.resize(n);
        for (std::size_t i = 0; i < n; ++i) r.values[i] = get_f64_le(is);
    }
    return snap;
}

void save(const pipeline::SrModel& model, const std::string& path) {
    const auto& cfg = model.cfg;
    RawSnapshot snap;
    snap.meta = {
        {"channels", std::to_string(cfg.channels)},
        {"encoder_blocks", std::to_string(cfg.encoder_blocks)},
        {"msc_branches", std::to_string(cfg.msc_branches)},
        {"proj_branches", std::to_string(cfg.proj_branches)},
        {"heads", std::to_string(cfg.heads)},
        {"fourier_freqs", std::to_string(cfg.fourier_freqs)},
        {"neighborhood", std::to_string(cfg.neighborhood)},
        {"logit_scale", fmt_double(cfg.logit_scale)},
        {"decoder_hidden", std::to_string(cfg.decoder_hidden)},
        {"decoder_depth", std::to_string(cfg.decoder_depth)},
        {"include_cell", cfg.include_cell ? "1" : "0"},
        {"use_fem", cfg.use_fem ? "1" : "0"},
        {"use_sim", cfg.use_sim ? "1" : "0"},
        {"fem_stride", std::to_string(cfg.fem_stride)},
        {"rim_linear_branch", cfg.rim_linear_branch ? "1" : "0"},
        {"chunk_size", std::to_string(cfg.chunk_size)},
        {"stage", reparam::stage_name(model.stage)},
        {"seed", std::to_string(model.seed)},
    };
    for (const auto& p : model.params.all()) {
        RawRecord r;
        r.name = p.name;
        r.shape = p.var.value().shape();
        r.trainable = p.trainable;
        r.values.assign(p.var.value().data(), p.var.value().data() + p.var.value().numel());
        snap.records.push_back(std::move(r));
    }
    write_raw(snap, path);
}

namespace {

int meta_int(const RawSnapshot& s, const std::string& key) {
    const std::string* v = s.meta_value(key);
    if (!v) throw std::runtime_error("snapshot: missing meta key " + key);
    return std::stoi(*v);
}

double meta_double(const RawSnapshot& s, const std::string& key) {
    const std::string* v = s.meta_value(key);
    if (!v) throw std::runtime_error("snapshot: missing meta key " + key);
    return std::stod(*v);
}

} // namespace

pipeline::SrModel from_raw(const RawSnapshot& snap) {
    pipeline::ModelConfig cfg;
    cfg.channels = meta_int(snap, "channels");
    cfg.encoder_blocks = meta_int(snap, "encoder_blocks");
    cfg.msc_branches = meta_int(snap, "msc_branches");
    cfg.proj_branches = meta_int(snap, "proj_branches");
    cfg.heads = meta_int(snap, "heads");
    cfg.fourier_freqs = meta_int(snap, "fourier_freqs");
    cfg.neighborhood = meta_int(snap, "neighborhood");
    cfg.logit_scale = meta_double(snap, "logit_scale");
    cfg.decoder_hidden = meta_int(snap, "decoder_hidden");
    cfg.decoder_depth = meta_int(snap, "decoder_depth");
    cfg.include_cell = meta_int(snap, "include_cell") != 0;
    cfg.use_fem = meta_int(snap, "use_fem") != 0;
    cfg.use_sim = meta_int(snap, "use_sim") != 0;
    cfg.fem_stride = meta_int(snap, "fem_stride");
    cfg.rim_linear_branch = meta_int(snap, "rim_linear_branch") != 0;
    cfg.chunk_size = meta_int(snap, "chunk_size");

    const std::string* stage_str = snap.meta_value("stage");
    const std::string* seed_str = snap.meta_value("seed");
    if (!stage_str || !seed_str) throw std::runtime_error("snapshot: missing stage/seed");
    const reparam::StageTag stage = reparam::stage_from_name(*stage_str);

    pipeline::SrModel model = pipeline::build_model(cfg, std::stoull(*seed_str));
    if (stage == reparam::StageTag::stage2_rim) reparam::wrap_model_with_rim(model);
    model.stage = stage;

    if (static_cast<int>(snap.records.size()) != model.params.size())
        throw std::runtime_error("snapshot: record count does not match the model layout");
    for (const auto& r : snap.records) {
        Param* p = model.params.find(r.name);
        if (!p) throw std::runtime_error("snapshot: unexpected record " + r.name);
        Tensor& t = p->var.value_mut();
        if (t.shape() != r.shape)
            throw std::runtime_error("snapshot: shape mismatch for " + r.name);
        std::copy(r.values.begin(), r.values.end(), t.data());
        p->set_trainable(r.trainable);
    }
    return model;
}

pipeline::SrModel load(const std::string& path) { return from_raw(read_raw(path)); }

} // namespace msit::snapshot
