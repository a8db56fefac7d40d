#include "msit/config.hpp"

#include <fstream>
#include <sstream>

namespace msit::config {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

int to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const int out = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError(key, "config: key '" + key + "' expects an integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError(key, "config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "0" || v == "false") return false;
    if (v == "1" || v == "true") return true;
    throw ConfigError(key, "config: key '" + key + "' expects 0/1, got '" + v + "'");
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const std::uint64_t out = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError(key, "config: key '" + key + "' expects an unsigned integer, got '" + v +
                                   "'");
    }
}

} // namespace

FileConfig parse_text(const std::string& text, const std::string& origin) {
    FileConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("", "config: " + origin + ":" + std::to_string(lineno) +
                                      " expected key=value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));

        if (key == "channels") cfg.model.channels = to_int(key, value);
        else if (key == "encoder_blocks") cfg.model.encoder_blocks = to_int(key, value);
        else if (key == "msc_branches") cfg.model.msc_branches = to_int(key, value);
        else if (key == "proj_branches") cfg.model.proj_branches = to_int(key, value);
        else if (key == "heads") cfg.model.heads = to_int(key, value);
        else if (key == "fourier_freqs") cfg.model.fourier_freqs = to_int(key, value);
        else if (key == "neighborhood") cfg.model.neighborhood = to_int(key, value);
        else if (key == "logit_scale") cfg.model.logit_scale = to_double(key, value);
        else if (key == "decoder_hidden") cfg.model.decoder_hidden = to_int(key, value);
        else if (key == "decoder_depth") cfg.model.decoder_depth = to_int(key, value);
        else if (key == "include_cell") cfg.model.include_cell = to_bool(key, value);
        else if (key == "use_fem") cfg.model.use_fem = to_bool(key, value);
        else if (key == "use_sim") cfg.model.use_sim = to_bool(key, value);
        else if (key == "fem_stride") cfg.model.fem_stride = to_int(key, value);
        else if (key == "rim_linear_branch") cfg.model.rim_linear_branch = to_bool(key, value);
        else if (key == "chunk_size") cfg.model.chunk_size = to_int(key, value);
        else if (key == "scale_min") cfg.train.scale_min = to_double(key, value);
        else if (key == "scale_max") cfg.train.scale_max = to_double(key, value);
        else if (key == "patch_lr") cfg.train.patch_lr = to_int(key, value);
        else if (key == "steps") cfg.train.steps = to_int(key, value);
        else if (key == "warmup_steps") cfg.train.warmup_steps = to_int(key, value);
        else if (key == "base_lr") cfg.train.base_lr = to_double(key, value);
        else if (key == "min_lr") cfg.train.min_lr = to_double(key, value);
        else if (key == "batch") cfg.train.batch = to_int(key, value);
        else if (key == "seed") cfg.train.seed = to_u64(key, value);
        else if (key == "augment") cfg.train.augment = to_bool(key, value);
        else if (key == "stage") cfg.train.stage = reparam::stage_from_name(value);
        else if (key == "grad_samples") cfg.grad_samples = to_int(key, value);
        else
            throw ConfigError(key, "config: unknown key '" + key + "' in " + origin + ":" +
                                       std::to_string(lineno));
    }
    return cfg;
}

FileConfig parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_text(buf.str(), path);
}

} // namespace msit::config
