#include "descore/train/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "descore/train/config.hpp"

namespace descore::train {

namespace {

constexpr char kMagic[8] = {'D', 'S', 'C', 'R', 'C', 'K', 'P', '1'};
constexpr uint32_t kVersion = 1;

class Writer {
public:
    void u8(uint8_t v) { raw(&v, 1); }
    void u32(uint32_t v) { raw(&v, 4); }
    void i32(int32_t v) { raw(&v, 4); }
    void i64(int64_t v) { raw(&v, 8); }
    void u64(uint64_t v) { raw(&v, 8); }
    void f64(double v) { raw(&v, 8); }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    void doubles(const std::vector<double>& v) { raw(v.data(), v.size() * sizeof(double)); }
    const std::string& bytes() const { return buf_; }

private:
    void raw(const void* p, size_t n) { buf_.append(static_cast<const char*>(p), n); }
    std::string buf_;
};

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}
    uint8_t u8() { return get<uint8_t>(); }
    uint32_t u32() { return get<uint32_t>(); }
    int32_t i32() { return get<int32_t>(); }
    int64_t i64() { return get<int64_t>(); }
    uint64_t u64() { return get<uint64_t>(); }
    double f64() { return get<double>(); }
    std::string str() {
        const uint32_t n = u32();
        check(n);
        std::string s(bytes_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    void doubles(std::vector<double>& out, size_t count) {
        check(count * sizeof(double));
        out.resize(count);
        std::memcpy(out.data(), bytes_.data() + pos_, count * sizeof(double));
        pos_ += count * sizeof(double);
    }
    bool exhausted() const { return pos_ == bytes_.size(); }

private:
    template <class T>
    T get() {
        check(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    void check(size_t n) const {
        if (pos_ + n > bytes_.size()) throw IoError("checkpoint: truncated payload");
    }
    std::string_view bytes_;
    size_t pos_ = 0;
};

void write_named_tensors(Writer& w, const std::vector<std::pair<std::string, const Tensor*>>& ts) {
    w.u32(static_cast<uint32_t>(ts.size()));
    for (const auto& [name, t] : ts) {
        w.str(name);
        w.u32(static_cast<uint32_t>(t->shape.size()));
        for (int d : t->shape) w.i32(d);
        w.doubles(t->data);
    }
}

std::vector<std::pair<std::string, const Tensor*>> collect(const ModelState& s) {
    std::vector<std::pair<std::string, const Tensor*>> out;
    s.visit([&out](const std::string& name, const Tensor& t) { out.emplace_back(name, &t); });
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> collect(const policy::PolicyParams& p) {
    std::vector<std::pair<std::string, const Tensor*>> out;
    p.visit([&out](const std::string& name, const Tensor& t) { out.emplace_back(name, &t); });
    return out;
}

// Reads a tensor table into pre-built parameters, matching names and shapes.
template <class Params>
void read_into(Reader& r, Params& params) {
    std::vector<std::pair<std::string, Tensor*>> slots;
    params.visit([&slots](const std::string& name, Tensor& t) { slots.emplace_back(name, &t); });
    const uint32_t count = r.u32();
    if (count != slots.size()) throw DataError("checkpoint: parameter count mismatch");
    for (uint32_t i = 0; i < count; ++i) {
        const std::string name = r.str();
        if (name != slots[i].first) {
            throw DataError("checkpoint: parameter name mismatch at " + name);
        }
        const uint32_t ndim = r.u32();
        std::vector<int> shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) shape[d] = r.i32();
        if (shape != slots[i].second->shape) {
            throw DataError("checkpoint: shape mismatch at " + name);
        }
        r.doubles(slots[i].second->data, static_cast<size_t>(numkit::shape_numel(shape)));
    }
}

void write_policy_cfg(Writer& w, const policy::PolicyConfig& cfg) {
    w.i32(cfg.width);
    w.i32(cfg.layers);
    w.i32(cfg.heads);
    w.i32(cfg.context);
    w.i32(cfg.n_free);
    w.f64(cfg.init_std);
}

policy::PolicyConfig read_policy_cfg(Reader& r) {
    policy::PolicyConfig cfg;
    cfg.width = r.i32();
    cfg.layers = r.i32();
    cfg.heads = r.i32();
    cfg.context = r.i32();
    cfg.n_free = r.i32();
    cfg.init_std = r.f64();
    return cfg;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    Writer w;
    w.u32(kVersion);
    w.u64(ckpt.config_fingerprint);
    w.i32(ckpt.stage);
    w.i64(ckpt.step);
    w.u64(ckpt.master_seed);
    write_policy_cfg(w, ckpt.state.policy.cfg);
    w.u8(ckpt.ref_policy ? 1 : 0);
    w.u8(ckpt.old_policy ? 1 : 0);
    write_named_tensors(w, collect(ckpt.state));
    w.i64(ckpt.opt.t);
    w.u32(static_cast<uint32_t>(ckpt.opt.m.size()));
    for (const Tensor& t : ckpt.opt.m) w.doubles(t.data);
    for (const Tensor& t : ckpt.opt.v) w.doubles(t.data);
    if (ckpt.ref_policy) write_named_tensors(w, collect(*ckpt.ref_policy));
    if (ckpt.old_policy) write_named_tensors(w, collect(*ckpt.old_policy));

    const uint64_t checksum = fnv1a64(w.bytes());
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out.good()) throw IoError("checkpoint: cannot write " + path.string());
    out.write(kMagic, sizeof(kMagic));
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    out.write(reinterpret_cast<const char*>(&checksum), sizeof(checksum));
    out.flush();
    if (!out.good()) throw IoError("checkpoint: short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) throw IoError("checkpoint: cannot read " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < sizeof(kMagic) + sizeof(uint64_t) ||
        std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw IoError("checkpoint: bad magic in " + path.string());
    }
    const size_t payload_len = bytes.size() - sizeof(kMagic) - sizeof(uint64_t);
    const std::string_view payload(bytes.data() + sizeof(kMagic), payload_len);
    uint64_t stored = 0;
    std::memcpy(&stored, bytes.data() + sizeof(kMagic) + payload_len, sizeof(stored));
    if (fnv1a64(payload) != stored) {
        throw IoError("checkpoint: checksum mismatch in " + path.string());
    }

    Reader r(payload);
    const uint32_t version = r.u32();
    if (version != kVersion) {
        throw DataError("checkpoint: unsupported version " + std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.config_fingerprint = r.u64();
    ckpt.stage = r.i32();
    ckpt.step = r.i64();
    ckpt.master_seed = r.u64();
    const policy::PolicyConfig cfg = read_policy_cfg(r);
    const bool has_ref = r.u8() != 0;
    const bool has_old = r.u8() != 0;

    ckpt.state = ModelState::init(cfg, 0);
    read_into(r, ckpt.state);
    ckpt.opt = AdamState::init_like(ckpt.state);
    ckpt.opt.t = r.i64();
    const uint32_t moments = r.u32();
    if (moments != ckpt.opt.m.size()) throw DataError("checkpoint: moment count mismatch");
    for (Tensor& t : ckpt.opt.m) r.doubles(t.data, t.data.size());
    for (Tensor& t : ckpt.opt.v) r.doubles(t.data, t.data.size());
    if (has_ref) {
        ckpt.ref_policy = policy::PolicyParams::init(cfg, 0);
        read_into(r, *ckpt.ref_policy);
    }
    if (has_old) {
        ckpt.old_policy = policy::PolicyParams::init(cfg, 0);
        read_into(r, *ckpt.old_policy);
    }
    if (!r.exhausted()) throw IoError("checkpoint: trailing bytes in " + path.string());
    return ckpt;
}

}  // namespace descore::train
