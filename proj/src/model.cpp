#include "mftrack/model.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "mftrack/errors.hpp"

namespace mft {

namespace ad = mft::ad;

TrackNet::TrackNet(const ModelConfig& c, uint64_t seed) : cfg(c) {
    Rng rng(seed);
    BackboneConfig bc;
    bc.widths = cfg.widths;
    bc.working_width = cfg.working_width;
    backbone = Backbone(bc, rng);
    filter = MixedFilter("filter", 2 * cfg.working_width, cfg.squeeze, rng);
    reduce = nn::Conv2d("reduce", 2 * cfg.working_width, cfg.working_width, 1, 1, 0, 1, true,
                        rng);
    fuse = nn::Conv2d("fuse", 64 + cfg.working_width, cfg.head_width, 1, 1, 0, 1, true, rng);
    heads = Heads("heads", cfg.head_width, rng);
    projection = ProjectionHeads("projection", cfg.working_width, rng);
}

ad::Var TrackNet::extract(const ad::Var& img, bool training) {
    return backbone.forward(img, training);
}

ad::Var TrackNet::relation_block(const ad::Var& first, const ad::Var& second, bool training,
                                 FilterTrace* trace) {
    auto gated = filter.forward(ad::concat(first, second, 1), trace);
    (void)training;
    return reduce.forward(gated);
}

HeadOutputs TrackNet::predict(const ad::Var& omega_t_pair, const ad::Var& omega_s_pair,
                              const ad::Var& f_frame, bool training) {
    auto corr = pixel_correlation(omega_t_pair, omega_s_pair);
    auto fused = fuse.forward(ad::concat(corr, f_frame, 1));
    return heads.forward(fused, training);
}

std::vector<nn::ParamRef> TrackNet::parameters() const {
    std::vector<nn::ParamRef> out;
    backbone.collect_params(out);
    filter.collect_params(out);
    reduce.collect_params(out);
    fuse.collect_params(out);
    heads.collect_params(out);
    projection.collect_params(out);
    return out;
}

std::vector<nn::BufferRef> TrackNet::buffers() {
    std::vector<nn::BufferRef> out;
    backbone.collect_buffers(out);
    heads.collect_buffers(out);
    projection.collect_buffers(out);
    return out;
}

int64_t TrackNet::param_count() const {
    int64_t n = 0;
    for (const auto& p : parameters()) n += p.var->val.numel();
    return n;
}

void TrackNet::set_adaptation(const adapt::Config* c) {
    for (auto* bn : heads.bn_layers()) bn->set_adaptation(c);
}

void TrackNet::set_bn_observer(const nn::BnObserver* obs) {
    for (auto* bn : heads.bn_layers()) bn->set_observer(obs);
}

void TrackNet::reset_adaptation() {
    for (auto* bn : heads.bn_layers()) bn->reset_adaptation();
}

namespace {

constexpr char kMagic[9] = "MFTCKPT1";
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ostream& os, uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_str(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void write_array(std::ostream& os, const std::string& name, const Tensor& t) {
    write_str(os, name);
    write_u32(os, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) write_u64(os, static_cast<uint64_t>(t.dim(i)));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw DataError("checkpoint: truncated file");
    return v;
}
uint64_t read_u64(std::istream& is) {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw DataError("checkpoint: truncated file");
    return v;
}
std::string read_str(std::istream& is) {
    const uint32_t n = read_u32(is);
    if (n > (1u << 24)) throw DataError("checkpoint: corrupt string length");
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw DataError("checkpoint: truncated file");
    return s;
}
Tensor read_array(std::istream& is, std::string& name) {
    name = read_str(is);
    const uint32_t rank = read_u32(is);
    if (rank > 4) throw DataError("checkpoint: corrupt rank for " + name);
    std::vector<int64_t> shape;
    for (uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int64_t>(read_u64(is)));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!is) throw DataError("checkpoint: truncated array " + name);
    return t;
}

void check_header(std::istream& is, const std::string& path) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw DataError("not a checkpoint file: " + path);
    const uint32_t version = read_u32(is);
    if (version != kVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version));
}

}  // namespace

void save_checkpoint(const std::string& path, TrackNet& net, const std::string& config_json) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write checkpoint: " + path);
    os.write(kMagic, 8);
    write_u32(os, kVersion);
    write_str(os, config_json);

    auto params = net.parameters();
    auto bufs = net.buffers();
    write_u64(os, static_cast<uint64_t>(params.size() + bufs.size()));
    for (const auto& p : params) write_array(os, p.name, p.var->val);
    for (const auto& b : bufs) write_array(os, b.name, *b.tensor);
    if (!os) throw DataError("checkpoint write failed: " + path);
}

std::string read_checkpoint_config(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    check_header(is, path);
    return read_str(is);
}

void load_checkpoint(const std::string& path, TrackNet& net) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    check_header(is, path);
    read_str(is);  // config echo, handled by the caller

    std::map<std::string, Tensor> arrays;
    const uint64_t count = read_u64(is);
    for (uint64_t i = 0; i < count; ++i) {
        std::string name;
        Tensor t = read_array(is, name);
        arrays.emplace(std::move(name), std::move(t));
    }

    auto assign = [&](const std::string& name, Tensor& dst) {
        auto it = arrays.find(name);
        if (it == arrays.end()) throw DataError("checkpoint missing array: " + name);
        if (!it->second.same_shape(dst))
            throw DataError("checkpoint shape mismatch for " + name + ": " +
                            Tensor::shape_str(it->second.shape()) + " vs " +
                            Tensor::shape_str(dst.shape()));
        dst = it->second;
        arrays.erase(it);
    };
    for (auto& p : net.parameters()) assign(p.name, p.var->val);
    for (auto& b : net.buffers()) assign(b.name, *b.tensor);
    if (!arrays.empty())
        throw DataError("checkpoint has unknown array: " + arrays.begin()->first);
}

}  // namespace mft
