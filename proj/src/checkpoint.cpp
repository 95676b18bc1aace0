#include "faclens/checkpoint.hpp"

#include <cmath>
#include <fstream>

#include "binary_io.hpp"
#include "faclens/error.hpp"

namespace faclens {

namespace {

constexpr std::uint16_t kFlagAdapter = 0x1;
constexpr std::uint32_t kMaxDim = 1u << 20;

}  // namespace

std::size_t write_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
    const ProbeModel& m = ckpt.model;
    if (!m.all_finite()) throw InputError("checkpoint: model has non-finite parameters");
    detail::Writer w(out);
    w.bytes(kModelMagic, 4);
    w.u16(kModelFormatVersion);
    w.u16(m.adapter ? kFlagAdapter : 0);
    w.u32(static_cast<std::uint32_t>(m.input_dim()));
    w.u32(static_cast<std::uint32_t>(m.hidden_width()));
    w.u32(static_cast<std::uint32_t>(kEncoderDepth));
    w.u32(m.adapter ? static_cast<std::uint32_t>(m.adapter->in_dim()) : 0u);
    for (auto t : tensors(m)) {
        for (double v : t) w.f32(static_cast<float>(v));
    }
    w.str(ckpt.config_json);
    w.finish();
    return w.written();
}

Checkpoint read_checkpoint(std::istream& in) {
    detail::Reader rd(in, "checkpoint");
    rd.expect_magic(kModelMagic);
    const std::uint16_t version = rd.u16();
    if (version != kModelFormatVersion) {
        throw FormatError(FormatErrc::unsupported_version, "checkpoint version " + std::to_string(version));
    }
    const std::uint16_t flags = rd.u16();
    if (flags & ~kFlagAdapter) throw FormatError(FormatErrc::invalid_header, "unknown checkpoint flags");
    ModelShape shape;
    shape.input_dim = rd.u32();
    shape.hidden_width = rd.u32();
    const std::uint32_t depth = rd.u32();
    const std::uint32_t adapter_in = rd.u32();
    if (depth != kEncoderDepth) {
        throw FormatError(FormatErrc::invalid_header, "encoder depth " + std::to_string(depth));
    }
    if (shape.input_dim == 0 || shape.hidden_width == 0 || shape.input_dim > kMaxDim || shape.hidden_width > kMaxDim) {
        throw FormatError(FormatErrc::invalid_header, "implausible model dims");
    }
    if (flags & kFlagAdapter) {
        if (adapter_in == 0 || adapter_in > kMaxDim) throw FormatError(FormatErrc::invalid_header, "adapter dim");
        shape.adapter_input_dim = adapter_in;
    }
    Checkpoint ckpt{ProbeModel::zeros(shape), {}};
    for (auto t : tensors(ckpt.model)) {
        for (double& v : t) {
            const float f = rd.f32();
            if (!std::isfinite(f)) throw FormatError(FormatErrc::non_finite, "checkpoint parameter");
            v = f;
        }
    }
    ckpt.config_json = rd.str(1u << 24);
    rd.expect_end();
    return ckpt;
}

std::size_t save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    return write_checkpoint(checkpoint, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open checkpoint " + path.string());
    return read_checkpoint(in);
}

ProbeModel round_to_float32(const ProbeModel& model) {
    ProbeModel out = model;
    for (auto t : tensors(out)) {
        for (double& v : t) v = static_cast<float>(v);
    }
    return out;
}

}  // namespace faclens
