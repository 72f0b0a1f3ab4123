#include "diffender/checkpoint.hpp"

#include "diffender/errors.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace diffender {

namespace {

constexpr char kMagic[8] = {'D', 'F', 'N', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("truncated checkpoint");
    return v;
}

}  // namespace

const nn::Param& Checkpoint::tensor(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw IoError("checkpoint is missing tensor '" + name + "'");
    return it->second;
}

void Checkpoint::load_into(nn::Param& p) const {
    const auto& src = tensor(p.name);
    if (src.shape != p.shape) throw ShapeError("checkpoint tensor '" + p.name + "' has unexpected shape");
    p.value = src.value;
}

void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& meta,
                     const std::vector<const nn::Param*>& params) {
    nlohmann::json header;
    header["kind"] = kind;
    header["meta"] = meta;
    header["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto* p : params) {
        header["tensors"].push_back({{"name", p->name}, {"shape", p->shape}, {"offset", offset}, {"count", p->size()}});
        offset += p->size();
    }
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write(kMagic, sizeof kMagic);
    write_pod(os, kVersion);
    write_pod(os, static_cast<std::uint64_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* p : params) {
        os.write(reinterpret_cast<const char*>(p->value.data()),
                 static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
    if (!os) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path.string());
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0) throw IoError("not a checkpoint: " + path.string());
    if (read_pod<std::uint32_t>(is) != kVersion) throw IoError("unsupported checkpoint version");
    const auto len = read_pod<std::uint64_t>(is);
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    if (!is) throw IoError("truncated checkpoint header");
    const auto header = nlohmann::json::parse(text);

    Checkpoint ck;
    ck.kind = header.at("kind").get<std::string>();
    ck.meta = header.at("meta");
    for (const auto& entry : header.at("tensors")) {
        nn::Param p(entry.at("name").get<std::string>(), entry.at("shape").get<std::vector<int>>());
        if (p.size() != entry.at("count").get<std::size_t>()) throw IoError("checkpoint tensor count mismatch");
        is.read(reinterpret_cast<char*>(p.value.data()), static_cast<std::streamsize>(p.size() * sizeof(double)));
        if (!is) throw IoError("truncated checkpoint payload");
        ck.tensors.emplace(p.name, std::move(p));
    }
    return ck;
}

}  // namespace diffender
