#pragma once

// Shared binary container: 8-byte magic, little-endian u64 JSON header
// length, UTF-8 JSON header, then raw little-endian f64 blobs at the byte
// offsets listed in the header's manifest.

#include <string>
#include <vector>

#include <json.hpp>

#include "danhar/tensor.hpp"

namespace danhar {

struct ContainerBlob {
    std::string name;
    Shape shape;
    std::vector<double> data;
};

// header gains a "manifest" array: [{name, shape, dtype, offset}, ...].
void write_container(const std::string& path, const std::string& magic, nlohmann::json header,
                     const std::vector<ContainerBlob>& blobs);

struct Container {
    nlohmann::json header;
    std::vector<ContainerBlob> blobs;

    const ContainerBlob& find(const std::string& name) const;
};

Container read_container(const std::string& path, const std::string& magic);

}  // namespace danhar
