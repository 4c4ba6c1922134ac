#include <doctest.h>

#include "facelivt/archive.hpp"
#include "facelivt/reparam.hpp"
#include "scratch_dir.hpp"

using namespace facelivt;

TEST_CASE("archive entries") {
    WeightArchive a;
    a.add("w", {2, 3}, {1, 2, 3, 4, 5, 6});
    a.add("scalar", {}, {7});
    CHECK(a.get("w").values.size() == 6);
    CHECK(a.find("missing") == nullptr);
    CHECK_THROWS_AS(a.get("missing"), FormatError);
    CHECK_THROWS_AS(a.add("w", {1}, {0}), FormatError);
    CHECK_THROWS_AS(a.add("bad", {2, 2}, {1, 2, 3}), FormatError);
}

TEST_CASE("archive serialization layout is little-endian and ordered") {
    WeightArchive a;
    a.add("ab", {1}, {1.0f});
    const std::vector<std::uint8_t> bytes = a.serialize();
    const std::vector<std::uint8_t> expected = {
        'F', 'L', 'V', 'T', 'W', 'T', 'S', '1',  // magic
        1, 0, 0, 0,                              // entry count
        2, 0, 0, 0, 'a', 'b',                    // name
        1, 0, 0, 0, 1, 0, 0, 0,                  // rank, dims
        0x00, 0x00, 0x80, 0x3f,                  // 1.0f
    };
    CHECK(bytes == expected);
}

TEST_CASE("model archive round trip is byte-identical") {
    for (const std::string& name : preset_names()) {
        Model model = build_model(preset(name), 4);
        const std::vector<std::uint8_t> first = to_archive(model).serialize();
        const Model back = from_archive(WeightArchive::deserialize(first));
        CHECK(to_archive(back).serialize() == first);
    }
    Model deploy = reparameterize_model(build_model(preset("s"), 4), {}, {.probes = 1, .seed = 0}).first;
    const std::vector<std::uint8_t> bytes = to_archive(deploy).serialize();
    const Model back = from_archive(WeightArchive::deserialize(bytes));
    CHECK(back.form == Form::deploy);
    CHECK(to_archive(back).serialize() == bytes);
}

TEST_CASE("partially fused models round trip") {
    Model model = build_model(preset("s-li"), 8);
    Model partial = reparameterize_model(model, {.fuse_bn = false, .fold_residual = true, .merge_pointwise = false},
                                         {.probes = 1, .seed = 0})
                        .first;
    const std::vector<std::uint8_t> bytes = to_archive(partial).serialize();
    CHECK(to_archive(from_archive(WeightArchive::deserialize(bytes))).serialize() == bytes);
}

TEST_CASE("files round trip through disk") {
    ScratchDir dir("facelivt-archive");
    Model model = build_model(preset("s-li"), 5);
    save_model(model, dir / "a.flvt");
    const Model loaded = load_model(dir / "a.flvt");
    save_model(loaded, dir / "b.flvt");
    CHECK(read_file(dir / "a.flvt") == read_file(dir / "b.flvt"));
    CHECK_THROWS_AS(load_model(dir / "missing.flvt"), IoError);
}

TEST_CASE("malformed archives are rejected") {
    std::vector<std::uint8_t> bytes = to_archive(build_model(preset("s-li"), 1)).serialize();

    std::vector<std::uint8_t> magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_AS(WeightArchive::deserialize(magic), FormatError);

    std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 3);
    CHECK_THROWS_AS(WeightArchive::deserialize(truncated), FormatError);

    std::vector<std::uint8_t> trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(WeightArchive::deserialize(trailing), FormatError);

    CHECK_THROWS_AS(WeightArchive::deserialize(std::vector<std::uint8_t>{}), FormatError);
}

TEST_CASE("archives with missing or extra entries do not load as models") {
    const WeightArchive full = to_archive(build_model(preset("s-li"), 1));

    WeightArchive extra = full;
    extra.add("unused", {1}, {0.0f});
    CHECK_THROWS_AS(from_archive(extra), FormatError);

    WeightArchive missing;
    for (const ArchiveEntry& e : full.entries())
        if (e.name != "head.bias") missing.add(e.name, e.dims, e.values);
    CHECK_THROWS_AS(from_archive(missing), FormatError);
}
