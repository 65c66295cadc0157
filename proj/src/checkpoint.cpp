#include "vla/checkpoint.hpp"

#include <cmath>
#include <limits>

#include "vla/binary_io.hpp"
#include "vla/error.hpp"

namespace vla::train {

namespace {

constexpr char kMagic[4] = {'V', 'L', 'A', 'C'};

struct Entry {
    std::string name;
    DType dtype = DType::F64;
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> raw;
};

Entry mat_entry(std::string name, const Mat& m) {
    Entry e{std::move(name), DType::F64, {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())}, {}};
    io::ByteWriter w;
    for (Eigen::Index i = 0; i < m.size(); ++i) w.f64(m.data()[i]);
    e.raw = w.take();
    return e;
}

Entry text_entry(std::string name, const std::string& text) {
    return Entry{std::move(name), DType::Text, {static_cast<std::uint32_t>(text.size())},
                 std::vector<std::uint8_t>(text.begin(), text.end())};
}

Mat entry_mat(const Entry& e, const std::string& ctx) {
    if (e.dtype != DType::F64 || e.dims.size() != 2) throw FormatError(ctx + ": entry " + e.name + " is not a matrix");
    Mat m(e.dims[0], e.dims[1]);
    io::ByteReader r(e.raw, ctx);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f64();
    return m;
}

std::string entry_text(const Entry& e, const std::string& ctx) {
    if (e.dtype != DType::Text) throw FormatError(ctx + ": entry " + e.name + " is not text");
    return std::string(e.raw.begin(), e.raw.end());
}

std::vector<std::pair<std::string, policy::Linear*>> linears(policy::PolicyParams& p) {
    std::vector<std::pair<std::string, policy::Linear*>> out{
        {"vision.top.proj", &p.top.proj}, {"vision.wrist.proj", &p.wrist.proj}, {"proprio.proj", &p.proprio}};
    for (std::size_t l = 0; l < p.blocks.size(); ++l) {
        auto& b = p.blocks[l];
        const std::string pre = "trunk." + std::to_string(l) + ".";
        out.emplace_back(pre + "attn.q", &b.q);
        out.emplace_back(pre + "attn.k", &b.k);
        out.emplace_back(pre + "attn.v", &b.v);
        out.emplace_back(pre + "attn.o", &b.o);
        out.emplace_back(pre + "ffn.fc1", &b.fc1);
        out.emplace_back(pre + "ffn.fc2", &b.fc2);
    }
    out.emplace_back("head.proj", &p.head);
    return out;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
    std::vector<Entry> entries;
    entries.push_back(text_entry("config.policy", to_key_values(ck.policy).to_text()));
    entries.push_back(text_entry("config.train", to_key_values(ck.train).to_text()));
    entries.push_back(text_entry("meta.step", std::to_string(ck.step)));

    auto& params = const_cast<policy::PolicyParams&>(ck.params);
    std::map<std::string, const quant::QuantizedTensor*> quantized;
    for (auto& [name, l] : linears(params)) {
        if (l->quantized) quantized[name + ".weight"] = &*l->quantized;
    }
    for (const auto& t : policy::list_tensors(ck.params)) {
        auto q = quantized.find(t.name);
        if (q == quantized.end()) {
            entries.push_back(mat_entry("param." + t.name, *t.value));
        } else {
            io::ByteWriter w;
            q->second->serialize(w);
            auto blob = w.take();
            entries.push_back(Entry{"param." + t.name, DType::Nf4, {static_cast<std::uint32_t>(blob.size())}, blob});
        }
    }

    entries.push_back(text_entry("optim.step", std::to_string(ck.optimizer.step)));
    for (const auto& [name, m] : ck.optimizer.m) entries.push_back(mat_entry("optim.m." + name, m));
    for (const auto& [name, v] : ck.optimizer.v) entries.push_back(mat_entry("optim.v." + name, v));

    Mat hist(static_cast<Eigen::Index>(ck.history.size()), 4);
    for (std::size_t i = 0; i < ck.history.size(); ++i) {
        const auto& r = ck.history[i];
        const auto row = static_cast<Eigen::Index>(i);
        hist(row, 0) = static_cast<double>(r.step);
        hist(row, 1) = r.train_loss;
        hist(row, 2) = r.val_loss ? *r.val_loss : std::numeric_limits<double>::quiet_NaN();
        hist(row, 3) = r.lr;
    }
    entries.push_back(mat_entry("history", hist));

    io::ByteWriter w;
    for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        w.u32(static_cast<std::uint32_t>(e.name.size()));
        w.str(e.name);
        w.u8(static_cast<std::uint8_t>(e.dtype));
        w.u32(static_cast<std::uint32_t>(e.dims.size()));
        for (auto d : e.dims) w.u32(d);
        w.u64(e.raw.size());
        w.bytes(e.raw);
    }
    return w.take();
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes, const std::string& ctx) {
    io::ByteReader r(bytes, ctx);
    for (char c : kMagic) {
        if (r.u8() != static_cast<std::uint8_t>(c)) throw FormatError(ctx + ": bad magic (not a checkpoint)");
    }
    const auto version = r.u32();
    if (version != kCheckpointVersion) throw FormatError(ctx + ": unsupported version " + std::to_string(version));
    const auto count = r.u32();
    std::map<std::string, Entry> entries;
    for (std::uint32_t i = 0; i < count; ++i) {
        Entry e;
        e.name = r.str(r.u32());
        const auto code = r.u8();
        if (code > static_cast<std::uint8_t>(DType::Text)) throw FormatError(ctx + ": unknown dtype in " + e.name);
        e.dtype = static_cast<DType>(code);
        const auto rank = r.u32();
        if (rank > 8) throw FormatError(ctx + ": implausible rank in " + e.name);
        for (std::uint32_t k = 0; k < rank; ++k) e.dims.push_back(r.u32());
        const auto n = r.u64();
        auto raw = r.bytes(n);
        e.raw.assign(raw.begin(), raw.end());
        if (e.dtype == DType::F64) {
            std::uint64_t elems = 1;
            for (auto d : e.dims) elems *= d;
            if (elems * 8 != n) throw FormatError(ctx + ": size of " + e.name + " does not match its shape");
        }
        entries.emplace(e.name, std::move(e));
    }
    if (r.remaining() != 0) throw FormatError(ctx + ": trailing bytes");

    auto need = [&](const std::string& name) -> const Entry& {
        auto it = entries.find(name);
        if (it == entries.end()) throw FormatError(ctx + ": missing entry " + name);
        return it->second;
    };

    Checkpoint ck;
    apply_config(KeyValues::parse(entry_text(need("config.policy"), ctx), ctx), ck.policy);
    apply_config(KeyValues::parse(entry_text(need("config.train"), ctx), ctx), ck.train);
    ck.step = std::stoull(entry_text(need("meta.step"), ctx));

    ck.params = policy::init_params(ck.policy, 0);
    const auto levels = quant::build_nf4_levels();
    std::map<std::string, policy::Linear*> by_weight;
    for (auto& [name, l] : linears(ck.params)) by_weight[name + ".weight"] = l;
    for (auto& t : policy::list_tensors(ck.params)) {
        const Entry& e = need("param." + t.name);
        if (e.dtype == DType::Nf4) {
            auto l = by_weight.find(t.name);
            if (l == by_weight.end()) throw FormatError(ctx + ": " + t.name + " cannot hold a quantized tensor");
            io::ByteReader qr(e.raw, ctx);
            auto q = quant::QuantizedTensor::deserialize(qr);
            if (static_cast<Eigen::Index>(q.rows) != t.value->rows() ||
                static_cast<Eigen::Index>(q.cols) != t.value->cols()) {
                throw FormatError(ctx + ": shape mismatch for " + t.name);
            }
            *t.value = quant::dequantize(q, levels);
            l->second->quantized = std::move(q);
        } else {
            Mat m = entry_mat(e, ctx);
            if (m.rows() != t.value->rows() || m.cols() != t.value->cols()) {
                throw FormatError(ctx + ": shape mismatch for " + t.name);
            }
            *t.value = std::move(m);
        }
    }

    ck.optimizer.step = std::stoull(entry_text(need("optim.step"), ctx));
    for (const auto& [name, e] : entries) {
        if (name.rfind("optim.m.", 0) == 0) ck.optimizer.m[name.substr(8)] = entry_mat(e, ctx);
        if (name.rfind("optim.v.", 0) == 0) ck.optimizer.v[name.substr(8)] = entry_mat(e, ctx);
    }

    const Mat hist = entry_mat(need("history"), ctx);
    if (hist.rows() > 0 && hist.cols() != 4) throw FormatError(ctx + ": history must have 4 columns");
    for (Eigen::Index i = 0; i < hist.rows(); ++i) {
        LossRecord rec;
        rec.step = static_cast<std::uint64_t>(hist(i, 0));
        rec.train_loss = hist(i, 1);
        if (!std::isnan(hist(i, 2))) rec.val_loss = hist(i, 2);
        rec.lr = hist(i, 3);
        ck.history.push_back(rec);
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    io::write_file(path, serialize_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return deserialize_checkpoint(io::read_file(path), path.string());
}

}  // namespace vla::train
