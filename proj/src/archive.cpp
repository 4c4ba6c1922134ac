#include "facelivt/archive.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>

namespace facelivt {

// --- Container ---------------------------------------------------------------

void WeightArchive::add(std::string name, std::vector<std::uint32_t> dims, std::vector<float> values) {
    const std::uint64_t expected =
        std::accumulate(dims.begin(), dims.end(), std::uint64_t{1}, std::multiplies<>());
    if (expected != values.size()) {
        throw FormatError("archive: entry '" + name + "' payload does not match its dims");
    }
    if (find(name) != nullptr) throw FormatError("archive: duplicate entry '" + name + "'");
    entries_.push_back({std::move(name), std::move(dims), std::move(values)});
}

const ArchiveEntry* WeightArchive::find(std::string_view name) const {
    auto it = std::find_if(entries_.begin(), entries_.end(), [&](const ArchiveEntry& e) { return e.name == name; });
    return it == entries_.end() ? nullptr : &*it;
}

const ArchiveEntry& WeightArchive::get(std::string_view name) const {
    const ArchiveEntry* entry = find(name);
    if (entry == nullptr) throw FormatError("archive: missing entry '" + std::string(name) + "'");
    return *entry;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::span<const std::uint8_t> take(std::size_t n) {
        if (bytes_.size() - pos_ < n) throw FormatError("archive: truncated payload");
        auto view = bytes_.subspan(pos_, n);
        pos_ += n;
        return view;
    }
    std::uint32_t u32() {
        auto b = take(4);
        return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
               std::uint32_t(b[3]) << 24;
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> WeightArchive::serialize() const {
    std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
    put_u32(out, static_cast<std::uint32_t>(entries_.size()));
    for (const ArchiveEntry& e : entries_) {
        put_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out.insert(out.end(), e.name.begin(), e.name.end());
        put_u32(out, static_cast<std::uint32_t>(e.dims.size()));
        for (std::uint32_t d : e.dims) put_u32(out, d);
        for (float v : e.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

WeightArchive WeightArchive::deserialize(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kMagic.size() || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
        throw FormatError("archive: bad magic (expected FLVTWTS1)");
    }
    Reader in(bytes.subspan(kMagic.size()));
    WeightArchive archive;
    const std::uint32_t count = in.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = in.u32();
        auto name_bytes = in.take(name_len);
        std::string name(name_bytes.begin(), name_bytes.end());
        const std::uint32_t rank = in.u32();
        if (rank > 8) throw FormatError("archive: entry '" + name + "' has implausible rank");
        std::vector<std::uint32_t> dims(rank);
        std::uint64_t size = 1;
        for (auto& d : dims) {
            d = in.u32();
            size *= d;
        }
        if (size * 4 > in.remaining()) throw FormatError("archive: entry '" + name + "' payload truncated");
        std::vector<float> values(size);
        for (auto& v : values) v = std::bit_cast<float>(in.u32());
        archive.add(std::move(name), std::move(dims), std::move(values));
    }
    if (in.remaining() != 0) throw FormatError("archive: trailing bytes after last entry");
    return archive;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

void WeightArchive::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

WeightArchive WeightArchive::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

// --- Model mapping -------------------------------------------------------------

namespace {

std::vector<float> as_floats(std::span<const std::size_t> values) {
    return {values.begin(), values.end()};
}

class Writer {
public:
    explicit Writer(WeightArchive& archive) : archive_(archive) {}

    void scalar(const std::string& name, float v) { archive_.add(name, {1}, {v}); }
    void vector(const std::string& name, const std::vector<float>& v) {
        archive_.add(name, {std::uint32_t(v.size())}, v);
    }
    void matrix(const std::string& name, const Matrix& m) {
        archive_.add(name, {std::uint32_t(m.rows()), std::uint32_t(m.cols())}, m.values());
    }
    void conv(const std::string& prefix, const ConvSpec& c) {
        const Shape& s = c.weight.shape();
        archive_.add(prefix + ".weight",
                     {std::uint32_t(s.n), std::uint32_t(s.c), std::uint32_t(s.h), std::uint32_t(s.w)},
                     c.weight.values());
        vector(prefix + ".bias", c.bias);
    }
    void bn(const std::string& prefix, const BnSpec& b) {
        vector(prefix + ".gamma", b.gamma);
        vector(prefix + ".beta", b.beta);
        vector(prefix + ".mean", b.mean);
        vector(prefix + ".sigma", b.sigma);
        scalar(prefix + ".eps", b.eps);
    }
    void rep(const std::string& prefix, const RepMixBlock& block) {
        conv(prefix + ".kxk", block.kxk);
        if (block.pointwise) conv(prefix + ".pointwise", *block.pointwise);
        if (block.bn) bn(prefix + ".bn", *block.bn);
        scalar(prefix + ".residual", block.residual ? 1.0f : 0.0f);
    }

private:
    WeightArchive& archive_;
};

std::string stage_prefix(std::size_t s, std::size_t b) {
    return "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
}

class Parser {
public:
    explicit Parser(const WeightArchive& archive) : archive_(archive) {}

    const ArchiveEntry& entry(const std::string& name, std::size_t rank) {
        const ArchiveEntry& e = archive_.get(name);
        if (e.dims.size() != rank) throw FormatError("archive: entry '" + name + "' has the wrong rank");
        used_.insert(name);
        return e;
    }
    bool has(const std::string& name) const { return archive_.find(name) != nullptr; }

    float scalar(const std::string& name) { return entry(name, 1).values.at(0); }
    std::vector<float> vector(const std::string& name) { return entry(name, 1).values; }
    std::size_t count(const std::string& name, std::size_t index) {
        const float v = vector(name).at(index);
        if (!(v >= 0.0f) || v != float(std::size_t(v))) throw FormatError("archive: '" + name + "' is not a count");
        return std::size_t(v);
    }
    Matrix matrix(const std::string& name) {
        const ArchiveEntry& e = entry(name, 2);
        return Matrix(e.dims[0], e.dims[1], e.values);
    }
    ConvSpec conv(const std::string& prefix, std::size_t stride, std::size_t padding, std::size_t groups) {
        const ArchiveEntry& w = entry(prefix + ".weight", 4);
        ConvSpec c;
        c.weight = Tensor({w.dims[0], w.dims[1], w.dims[2], w.dims[3]}, w.values);
        c.bias = vector(prefix + ".bias");
        c.stride = stride;
        c.padding = padding;
        c.groups = groups;
        return c;
    }
    BnSpec bn(const std::string& prefix) {
        BnSpec b;
        b.gamma = vector(prefix + ".gamma");
        b.beta = vector(prefix + ".beta");
        b.mean = vector(prefix + ".mean");
        b.sigma = vector(prefix + ".sigma");
        b.eps = scalar(prefix + ".eps");
        return b;
    }
    RepMixBlock rep(const std::string& prefix, Form form, std::size_t stride, std::size_t kernel, std::size_t groups) {
        RepMixBlock block;
        block.form = form;
        block.kxk = conv(prefix + ".kxk", stride, kernel / 2, groups);
        if (has(prefix + ".pointwise.weight")) block.pointwise = conv(prefix + ".pointwise", stride, 0, groups);
        if (has(prefix + ".bn.gamma")) block.bn = bn(prefix + ".bn");
        block.residual = scalar(prefix + ".residual") != 0.0f;
        return block;
    }

    void require_all_used() const {
        for (const ArchiveEntry& e : archive_.entries()) {
            if (!used_.contains(e.name)) throw FormatError("archive: unexpected entry '" + e.name + "'");
        }
    }

private:
    const WeightArchive& archive_;
    std::set<std::string> used_;
};

}  // namespace

WeightArchive to_archive(const Model& model) {
    model.validate();
    const ModelConfig& config = model.config;
    WeightArchive archive;
    Writer w(archive);

    std::vector<float> variant(config.variant.begin(), config.variant.end());
    archive.add("config.variant", {std::uint32_t(variant.size())}, variant);
    w.vector("config.stage_dims", as_floats(config.stage_dims));
    w.vector("config.stage_blocks", as_floats(config.stage_blocks));
    std::vector<float> mixers;
    for (MixerKind kind : config.stage_mixers) mixers.push_back(float(static_cast<int>(kind)));
    w.vector("config.stage_mixers", mixers);
    w.vector("config.stage_resolutions", as_floats(config.stage_resolutions));
    const std::array<std::size_t, 7> hyper{config.stem_dim,  config.heads,       config.mhla_expansion,
                                           config.mlp_expansion, config.embed_dim, config.kernel_size,
                                           config.input_size};
    w.vector("config.hyper", as_floats(hyper));
    w.scalar("model.form", model.form == Form::train ? 0.0f : 1.0f);

    for (std::size_t i = 0; i < model.stem.size(); ++i) {
        const std::string prefix = "stem" + std::to_string(i);
        w.conv(prefix + ".conv", model.stem[i].conv);
        if (model.stem[i].bn) w.bn(prefix + ".bn", *model.stem[i].bn);
    }
    for (std::size_t s = 0; s < kStageCount; ++s) {
        if (s > 0) w.rep("downsample" + std::to_string(s), model.downsamplers[s - 1]);
        for (std::size_t b = 0; b < model.stages[s].size(); ++b) {
            const Block& block = model.stages[s][b];
            const std::string prefix = stage_prefix(s, b);
            if (const auto* rep = std::get_if<RepMixBlock>(&block.mixer)) {
                w.rep(prefix + ".mixer", *rep);
            } else if (const auto* att = std::get_if<MhsaBlock>(&block.mixer)) {
                w.matrix(prefix + ".mixer.wq", att->wq);
                w.matrix(prefix + ".mixer.wk", att->wk);
                w.matrix(prefix + ".mixer.wv", att->wv);
                w.matrix(prefix + ".mixer.wo", att->wo);
            } else {
                const auto& lin = std::get<MhlaBlock>(block.mixer);
                for (std::size_t h = 0; h < lin.heads; ++h) {
                    w.matrix(prefix + ".mixer.head" + std::to_string(h) + ".w_in", lin.w_in[h]);
                    w.matrix(prefix + ".mixer.head" + std::to_string(h) + ".w_out", lin.w_out[h]);
                }
            }
            const MlpBlock& mlp = block.mlp;
            w.matrix(prefix + ".mlp.w_expand", mlp.w_expand);
            if (!mlp.b_expand.empty()) w.vector(prefix + ".mlp.b_expand", mlp.b_expand);
            if (mlp.bn_inner) w.bn(prefix + ".mlp.bn_inner", *mlp.bn_inner);
            w.matrix(prefix + ".mlp.w_reduce", mlp.w_reduce);
            if (!mlp.b_reduce.empty()) w.vector(prefix + ".mlp.b_reduce", mlp.b_reduce);
            if (mlp.bn_outer) w.bn(prefix + ".mlp.bn_outer", *mlp.bn_outer);
        }
    }
    w.matrix("head.weight", model.head_weight);
    w.vector("head.bias", model.head_bias);
    return archive;
}

Model from_archive(const WeightArchive& archive) {
    Parser p(archive);
    Model model;
    ModelConfig& config = model.config;
    try {
        const std::vector<float> variant = p.vector("config.variant");
        config.variant.clear();
        for (float c : variant) config.variant.push_back(static_cast<char>(c));
        for (std::size_t s = 0; s < kStageCount; ++s) {
            config.stage_dims[s] = p.count("config.stage_dims", s);
            config.stage_blocks[s] = p.count("config.stage_blocks", s);
            const std::size_t mixer = p.count("config.stage_mixers", s);
            if (mixer > 2) throw FormatError("archive: unknown mixer code");
            config.stage_mixers[s] = static_cast<MixerKind>(mixer);
            config.stage_resolutions[s] = p.count("config.stage_resolutions", s);
        }
        config.stem_dim = p.count("config.hyper", 0);
        config.heads = p.count("config.hyper", 1);
        config.mhla_expansion = p.count("config.hyper", 2);
        config.mlp_expansion = p.count("config.hyper", 3);
        config.embed_dim = p.count("config.hyper", 4);
        config.kernel_size = p.count("config.hyper", 5);
        config.input_size = p.count("config.hyper", 6);
        config.validate();
        model.form = p.scalar("model.form") == 0.0f ? Form::train : Form::deploy;

        const std::size_t k = config.kernel_size;
        for (std::size_t i = 0; i < model.stem.size(); ++i) {
            const std::string prefix = "stem" + std::to_string(i);
            model.stem[i].conv = p.conv(prefix + ".conv", 2, k / 2, 1);
            if (p.has(prefix + ".bn.gamma")) model.stem[i].bn = p.bn(prefix + ".bn");
        }
        for (std::size_t s = 0; s < kStageCount; ++s) {
            const std::size_t c = config.stage_dims[s];
            if (s > 0) model.downsamplers[s - 1] = p.rep("downsample" + std::to_string(s), model.form, 2, k, 1);
            for (std::size_t b = 0; b < config.stage_blocks[s]; ++b) {
                const std::string prefix = stage_prefix(s, b);
                Block block;
                switch (config.stage_mixers[s]) {
                    case MixerKind::repmix:
                        block.mixer = p.rep(prefix + ".mixer", model.form, 1, k, c);
                        break;
                    case MixerKind::mhsa: {
                        MhsaBlock att;
                        att.wq = p.matrix(prefix + ".mixer.wq");
                        att.wk = p.matrix(prefix + ".mixer.wk");
                        att.wv = p.matrix(prefix + ".mixer.wv");
                        att.wo = p.matrix(prefix + ".mixer.wo");
                        att.heads = config.heads;
                        block.mixer = std::move(att);
                        break;
                    }
                    case MixerKind::mhla: {
                        MhlaBlock lin;
                        lin.heads = config.heads;
                        lin.tokens = config.stage_resolutions[s] * config.stage_resolutions[s];
                        lin.expansion = config.mhla_expansion;
                        for (std::size_t h = 0; h < lin.heads; ++h) {
                            lin.w_in.push_back(p.matrix(prefix + ".mixer.head" + std::to_string(h) + ".w_in"));
                            lin.w_out.push_back(p.matrix(prefix + ".mixer.head" + std::to_string(h) + ".w_out"));
                        }
                        block.mixer = std::move(lin);
                        break;
                    }
                }
                MlpBlock& mlp = block.mlp;
                mlp.form = model.form;
                mlp.w_expand = p.matrix(prefix + ".mlp.w_expand");
                if (p.has(prefix + ".mlp.b_expand")) mlp.b_expand = p.vector(prefix + ".mlp.b_expand");
                if (p.has(prefix + ".mlp.bn_inner.gamma")) mlp.bn_inner = p.bn(prefix + ".mlp.bn_inner");
                mlp.w_reduce = p.matrix(prefix + ".mlp.w_reduce");
                if (p.has(prefix + ".mlp.b_reduce")) mlp.b_reduce = p.vector(prefix + ".mlp.b_reduce");
                if (p.has(prefix + ".mlp.bn_outer.gamma")) mlp.bn_outer = p.bn(prefix + ".mlp.bn_outer");
                model.stages[s].push_back(std::move(block));
            }
        }
        model.head_weight = p.matrix("head.weight");
        model.head_bias = p.vector("head.bias");
        p.require_all_used();
        model.validate();
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError(std::string("archive: inconsistent model: ") + e.what());
    }
    return model;
}

void save_model(const Model& model, const std::filesystem::path& path) { to_archive(model).save(path); }

Model load_model(const std::filesystem::path& path) { return from_archive(WeightArchive::load(path)); }

}  // namespace facelivt
