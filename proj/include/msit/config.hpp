#pragma once

#include <stdexcept>
#include <string>

#include "msit/model.hpp"
#include "msit/trainer.hpp"

namespace msit::config {

struct ConfigError : std::runtime_error {
    std::string key;
    ConfigError(std::string k, const std::string& message)
        : std::runtime_error(message), key(std::move(k)) {}
};

struct FileConfig {
    pipeline::ModelConfig model;
    trainer::TrainConfig train;
    int grad_samples = 32;
};

// flat key=value text; '#' comments; every key must be known
FileConfig parse_file(const std::string& path);
FileConfig parse_text(const std::string& text, const std::string& origin);

} // namespace msit::config
