#include "danhar/container.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace danhar {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

void write_container(const std::string& path, const std::string& magic, nlohmann::json header,
                     const std::vector<ContainerBlob>& blobs) {
    if (magic.size() != 8) throw IoError("container magic must be exactly 8 bytes");
    nlohmann::json manifest = nlohmann::json::array();
    uint64_t offset = 0;
    for (const ContainerBlob& blob : blobs) {
        if (shape_numel(blob.shape) != static_cast<int64_t>(blob.data.size())) {
            throw IoError("blob '" + blob.name + "' data does not match its shape");
        }
        manifest.push_back({{"name", blob.name},
                            {"shape", blob.shape},
                            {"dtype", "f64"},
                            {"offset", offset}});
        offset += blob.data.size() * sizeof(double);
    }
    header["manifest"] = std::move(manifest);
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(magic.data(), 8);
    const uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const ContainerBlob& blob : blobs) {
        out.write(reinterpret_cast<const char*>(blob.data.data()),
                  static_cast<std::streamsize>(blob.data.size() * sizeof(double)));
    }
    if (!out) throw IoError("short write to '" + path + "'");
}

const ContainerBlob& Container::find(const std::string& name) const {
    for (const ContainerBlob& blob : blobs) {
        if (blob.name == name) return blob;
    }
    throw IoError("container has no blob named '" + name + "'");
}

Container read_container(const std::string& path, const std::string& magic) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    char found[8];
    if (!in.read(found, 8)) throw IoError("'" + path + "' is truncated (no magic)");
    if (std::memcmp(found, magic.data(), 8) != 0) {
        throw IoError("'" + path + "' is not a " + magic + " container");
    }
    uint64_t len = 0;
    if (!in.read(reinterpret_cast<char*>(&len), sizeof(len))) {
        throw IoError("'" + path + "' is truncated (no header length)");
    }
    std::string text(len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(len))) {
        throw IoError("'" + path + "' is truncated (header)");
    }
    Container c;
    try {
        c.header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("'" + path + "' has a malformed header: " + e.what());
    }
    if (!c.header.contains("manifest") || !c.header["manifest"].is_array()) {
        throw IoError("'" + path + "' header is missing its manifest");
    }
    const std::streampos blob_base = in.tellg();
    for (const auto& entry : c.header["manifest"]) {
        ContainerBlob blob;
        try {
            blob.name = entry.at("name").get<std::string>();
            blob.shape = entry.at("shape").get<Shape>();
            const auto dtype = entry.at("dtype").get<std::string>();
            if (dtype != "f64") {
                throw IoError("blob '" + blob.name + "' has unsupported dtype '" + dtype + "'");
            }
            const uint64_t offset = entry.at("offset").get<uint64_t>();
            const int64_t count = shape_numel(blob.shape);
            if (count <= 0) throw IoError("blob '" + blob.name + "' has an invalid shape");
            blob.data.resize(static_cast<size_t>(count));
            in.seekg(blob_base + static_cast<std::streamoff>(offset));
            if (!in.read(reinterpret_cast<char*>(blob.data.data()),
                         static_cast<std::streamsize>(blob.data.size() * sizeof(double)))) {
                throw IoError("'" + path + "' is truncated reading blob '" + blob.name + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw IoError("'" + path + "' has a malformed manifest entry: " + e.what());
        }
        c.blobs.push_back(std::move(blob));
    }
    return c;
}

}  // namespace danhar
