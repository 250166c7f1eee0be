#include "stjgcn/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace stjgcn {

namespace {
constexpr char kMagic[7] = {'S', 'T', 'J', 'G', 'C', 'N', '1'};
}

void Checkpoint::save(const std::string& path) const {
    nlohmann::json manifest;
    manifest["meta"] = meta;
    manifest["arrays"] = nlohmann::json::array();
    for (auto& b : arrays) {
        nlohmann::json e;
        e["name"] = b.name;
        e["dtype"] = b.dtype;
        e["shape"] = b.shape;
        manifest["arrays"].push_back(e);
    }
    std::string text = manifest.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os.write(kMagic, sizeof kMagic);
    uint32_t len = static_cast<uint32_t>(text.size());
    os.write(reinterpret_cast<const char*>(&len), sizeof len);
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (auto& b : arrays)
        os.write(reinterpret_cast<const char*>(b.bytes.data()),
                 static_cast<std::streamsize>(b.bytes.size()));
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    char magic[7];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw std::runtime_error(path + ": not a model checkpoint (bad magic)");
    uint32_t len = 0;
    is.read(reinterpret_cast<char*>(&len), sizeof len);
    std::string text(len, '\0');
    is.read(text.data(), len);
    if (!is) throw std::runtime_error(path + ": truncated manifest");
    nlohmann::json manifest = nlohmann::json::parse(text);

    Checkpoint ck;
    ck.meta = manifest.at("meta");
    for (auto& e : manifest.at("arrays")) {
        NamedBlob b;
        b.name = e.at("name").get<std::string>();
        b.dtype = e.at("dtype").get<std::string>();
        b.shape = e.at("shape").get<Shape>();
        size_t width = b.dtype == "f64" ? 8 : 4;
        b.bytes.resize(static_cast<size_t>(shape_numel(b.shape)) * width);
        is.read(reinterpret_cast<char*>(b.bytes.data()),
                static_cast<std::streamsize>(b.bytes.size()));
        if (!is) throw std::runtime_error(path + ": truncated payload for '" + b.name + "'");
        ck.arrays.push_back(std::move(b));
    }
    return ck;
}

}  // namespace stjgcn
