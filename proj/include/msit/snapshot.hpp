#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "msit/model.hpp"

namespace msit::snapshot {

// Flat container: a text manifest (meta key/value pairs plus one line per
// record) followed by the raw 64-bit little-endian payload in manifest
// order. Identical bytes mean an identical model.
struct RawRecord {
    std::string name;
    std::array<int, 4> shape{0, 0, 0, 0};
    bool trainable = true;
    std::vector<double> values;
};

struct RawSnapshot {
    std::vector<std::pair<std::string, std::string>> meta;
    std::vector<RawRecord> records;

    const std::string* meta_value(const std::string& key) const;
};

void write_raw(const RawSnapshot& snap, const std::string& path);
RawSnapshot read_raw(const std::string& path);

void save(const pipeline::SrModel& model, const std::string& path);
// rebuild a model from parsed records; throws on any layout mismatch
pipeline::SrModel from_raw(const RawSnapshot& snap);
pipeline::SrModel load(const std::string& path);

} // namespace msit::snapshot
