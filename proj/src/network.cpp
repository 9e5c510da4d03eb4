#include "bsdgan/network.hpp"

#include "bsdgan/autoencoder.hpp"
#include "bsdgan/errors.hpp"
#include "bsdgan/io.hpp"

#include <sstream>

namespace bsdgan {

using nlohmann::json;

namespace {

bool try_plan(const ArchitectureDescriptor& d, ShapePlan& plan, std::string& why)
{
    plan = {};
    plan.lengths.push_back(d.length);
    for (std::size_t i = 0; i < d.conv_blocks.size(); ++i) {
        const auto& b = d.conv_blocks[i];
        const int pad = b.kernel / 2;
        const int in = plan.lengths.back();
        if (in + 2 * pad - b.kernel < 0) {
            why = "conv block " + std::to_string(i + 1) + " kernel exceeds padded input length " + std::to_string(in);
            return false;
        }
        plan.lengths.push_back((in + 2 * pad - b.kernel) / b.stride + 1);
    }
    plan.output_padding.resize(d.conv_blocks.size());
    for (std::size_t i = 0; i < d.conv_blocks.size(); ++i) {
        const auto& b = d.conv_blocks[i];
        const int pad = b.kernel / 2;
        const int base = (plan.lengths[i + 1] - 1) * b.stride - 2 * pad + b.kernel;
        const int op = plan.lengths[i] - base;
        if (op < 0 || op >= b.stride) {
            why = "transposed block restoring length " + std::to_string(plan.lengths[i]) + " would need output padding " +
                  std::to_string(op) + " (allowed 0.." + std::to_string(b.stride - 1) + ")";
            return false;
        }
        plan.output_padding[i] = op;
    }
    plan.feature_channels = d.conv_blocks.back().filters;
    plan.feature_length = plan.lengths.back();
    return true;
}

void check_basic(const ArchitectureDescriptor& d)
{
    if (d.channels < 1 || d.length < 1)
        throw DescriptorError("input shape must be positive, got (" + std::to_string(d.channels) + ", " +
                              std::to_string(d.length) + ")");
    if (d.latent_dim <= 0)
        throw DescriptorError("latent_dim must be > 0");
    if (d.class_count < 2)
        throw DescriptorError("class_count must be >= 2, got " + std::to_string(d.class_count));
    if (d.conv_blocks.empty())
        throw DescriptorError("at least one conv block is required");
    for (const auto& b : d.conv_blocks)
        if (b.filters < 1 || b.kernel < 1 || b.stride < 1)
            throw DescriptorError("conv block filters, kernel and stride must be >= 1");
    if (d.label_embedding_dim < 1 || d.fusion_width < 1)
        throw DescriptorError("label_embedding_dim and fusion_width must be >= 1");
}

const ParamArray& require(const ParamSet& p, const std::string& name)
{
    auto it = p.find(name);
    if (it == p.end())
        throw ShapeError("missing parameter '" + name + "'");
    return it->second;
}

void expect_role(const NetworkParams& p, Role role)
{
    if (p.role != role)
        throw ShapeError("expected " + to_string(role) + " parameters, got " + to_string(p.role));
}

void check_input(const ArchitectureDescriptor& d, const Tensor& x)
{
    if (x.channels() != d.channels || x.length != d.length)
        throw ShapeError("input shape (" + std::to_string(x.channels()) + ", " + std::to_string(x.length) +
                         ") does not match descriptor (" + std::to_string(d.channels) + ", " +
                         std::to_string(d.length) + ")");
}

void check_labels(const ArchitectureDescriptor& d, std::span<const int> labels, Eigen::Index batch)
{
    if (static_cast<Eigen::Index>(labels.size()) != batch)
        throw ShapeError(std::to_string(labels.size()) + " labels for a batch of " + std::to_string(batch));
    for (int c : labels)
        if (c < 0 || c >= d.class_count)
            throw ShapeError("label " + std::to_string(c) + " outside [0, " + std::to_string(d.class_count) + ")");
}

ParamArray embedding_table(int classes, int dim)
{
    // row-major [classes, dim]: column c of as_matrix(dim, classes) is class c
    return ParamArray{{classes, dim}, Vector::Zero(static_cast<Eigen::Index>(classes) * dim)};
}

} // namespace

ShapePlan plan_shapes(const ArchitectureDescriptor& desc)
{
    check_basic(desc);
    ShapePlan plan;
    std::string why;
    if (!try_plan(desc, plan, why)) {
        std::ostringstream msg;
        msg << "length " << desc.length << " cannot be restored by the decoder: " << why << "; feasible lengths near "
            << desc.length << ":";
        for (int t : feasible_lengths(desc, std::max(1, desc.length - 16), desc.length + 16))
            msg << ' ' << t;
        throw DescriptorError(msg.str());
    }
    return plan;
}

std::vector<int> feasible_lengths(const ArchitectureDescriptor& desc, int lo, int hi)
{
    std::vector<int> out;
    ArchitectureDescriptor d = desc;
    ShapePlan plan;
    std::string why;
    for (int t = lo; t <= hi; ++t) {
        d.length = t;
        if (try_plan(d, plan, why))
            out.push_back(t);
    }
    return out;
}

void validate(const ArchitectureDescriptor& desc) { plan_shapes(desc); }

json to_json(const ArchitectureDescriptor& d)
{
    json blocks = json::array();
    for (const auto& b : d.conv_blocks)
        blocks.push_back({{"filters", b.filters}, {"kernel", b.kernel}, {"stride", b.stride}});
    return {{"channels", d.channels},
            {"length", d.length},
            {"latent_dim", d.latent_dim},
            {"class_count", d.class_count},
            {"conv_blocks", blocks},
            {"activation", "leaky_relu"},
            {"leaky_slope", d.leaky_slope},
            {"label_embedding_dim", d.label_embedding_dim},
            {"fusion_width", d.fusion_width}};
}

ArchitectureDescriptor descriptor_from_json(const json& j)
{
    ArchitectureDescriptor d;
    d.channels = j.at("channels").get<int>();
    d.length = j.at("length").get<int>();
    d.latent_dim = j.at("latent_dim").get<int>();
    d.class_count = j.at("class_count").get<int>();
    d.conv_blocks.clear();
    for (const auto& b : j.at("conv_blocks"))
        d.conv_blocks.push_back({b.at("filters").get<int>(), b.at("kernel").get<int>(), b.at("stride").get<int>()});
    d.leaky_slope = j.at("leaky_slope").get<double>();
    d.label_embedding_dim = j.at("label_embedding_dim").get<int>();
    d.fusion_width = j.at("fusion_width").get<int>();
    return d;
}

std::string to_string(Role role)
{
    switch (role) {
    case Role::encoder: return "encoder";
    case Role::decoder: return "decoder";
    case Role::generator: return "generator";
    case Role::discriminator: return "discriminator";
    }
    return "?";
}

Role role_from_string(const std::string& name)
{
    for (Role r : {Role::encoder, Role::decoder, Role::generator, Role::discriminator})
        if (to_string(r) == name)
            return r;
    throw FormatError("unknown network role '" + name + "'");
}

nn::Sequential encoder_trunk(const ArchitectureDescriptor& desc)
{
    nn::Sequential s;
    int in = desc.channels;
    for (std::size_t i = 0; i < desc.conv_blocks.size(); ++i) {
        const auto& b = desc.conv_blocks[i];
        s.add(nn::Conv1d{"conv" + std::to_string(i + 1), in, b.filters, b.kernel, b.stride, b.kernel / 2});
        s.add(nn::LeakyRelu{desc.leaky_slope});
        in = b.filters;
    }
    return s;
}

nn::Sequential encoder_stack(const ArchitectureDescriptor& desc)
{
    const auto plan = plan_shapes(desc);
    nn::Sequential s = encoder_trunk(desc);
    s.add(nn::Reshape{plan.flat_features(), 1});
    s.add(nn::Dense{"proj", plan.flat_features(), desc.latent_dim});
    return s;
}

nn::Sequential decoder_stack(const ArchitectureDescriptor& desc)
{
    const auto plan = plan_shapes(desc);
    nn::Sequential s;
    s.add(nn::Dense{"fc", desc.latent_dim, plan.flat_features()});
    s.add(nn::LeakyRelu{desc.leaky_slope});
    s.add(nn::Reshape{plan.feature_channels, plan.feature_length});
    const int blocks = static_cast<int>(desc.conv_blocks.size());
    for (int i = blocks - 1, k = 1; i >= 0; --i, ++k) {
        const auto& b = desc.conv_blocks[static_cast<std::size_t>(i)];
        const int out = i > 0 ? desc.conv_blocks[static_cast<std::size_t>(i - 1)].filters : desc.channels;
        s.add(nn::ConvTranspose1d{"deconv" + std::to_string(k), b.filters, out, b.kernel, b.stride, b.kernel / 2,
                                  plan.output_padding[static_cast<std::size_t>(i)]});
        if (i > 0)
            s.add(nn::LeakyRelu{desc.leaky_slope});
    }
    return s;
}

namespace {

nn::Sequential discriminator_head(const ArchitectureDescriptor& desc)
{
    const auto plan = plan_shapes(desc);
    nn::Sequential s;
    s.add(nn::Dense{"fusion", plan.flat_features() + desc.label_embedding_dim, desc.fusion_width});
    s.add(nn::LeakyRelu{desc.leaky_slope});
    s.add(nn::Dense{"head", desc.fusion_width, desc.class_count + 1});
    return s;
}

void init_uniform(ParamArray& a, double limit, Rng& rng)
{
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index i = 0; i < a.values.size(); ++i)
        a.values[i] = dist(rng);
}

} // namespace

ParamSet parameter_template(Role role, const ArchitectureDescriptor& desc)
{
    ParamSet p;
    Rng rng(0);
    switch (role) {
    case Role::encoder: encoder_stack(desc).init(p, rng); break;
    case Role::decoder: decoder_stack(desc).init(p, rng); break;
    case Role::generator:
        decoder_stack(desc).init(p, rng);
        p["embedding.table"] = embedding_table(desc.class_count, desc.latent_dim);
        p["embedding.noise_scale"] = embedding_table(desc.class_count, desc.latent_dim);
        break;
    case Role::discriminator:
        encoder_trunk(desc).init(p, rng);
        p["label_embedding.table"] = embedding_table(desc.class_count, desc.label_embedding_dim);
        discriminator_head(desc).init(p, rng);
        break;
    }
    for (auto& [name, a] : p)
        a.values.setZero();
    return p;
}

Autoencoder build_autoencoder(const ArchitectureDescriptor& desc, std::uint64_t seed)
{
    validate(desc);
    Rng rng(seed);
    Autoencoder ae;
    ae.encoder.role = Role::encoder;
    ae.encoder.arch = desc;
    ae.encoder.seed = seed;
    encoder_stack(desc).init(ae.encoder.arrays, rng);
    ae.decoder.role = Role::decoder;
    ae.decoder.arch = desc;
    ae.decoder.seed = seed;
    decoder_stack(desc).init(ae.decoder.arrays, rng);
    return ae;
}

NetworkParams build_generator(const NetworkParams& decoder, const LatentPrior& prior, std::uint64_t seed)
{
    expect_role(decoder, Role::decoder);
    const auto& d = decoder.arch;
    if (prior.means.rows() != d.class_count || prior.means.cols() != d.latent_dim ||
        prior.stds.rows() != d.class_count || prior.stds.cols() != d.latent_dim)
        throw ShapeError("latent prior is " + std::to_string(prior.means.rows()) + "x" +
                         std::to_string(prior.means.cols()) + ", generator expects " + std::to_string(d.class_count) +
                         "x" + std::to_string(d.latent_dim));
    NetworkParams g;
    g.role = Role::generator;
    g.arch = d;
    g.seed = seed;
    g.arrays = decoder.arrays;
    auto table = embedding_table(d.class_count, d.latent_dim);
    auto scale = embedding_table(d.class_count, d.latent_dim);
    table.as_matrix(d.latent_dim, d.class_count) = prior.means.transpose();
    scale.as_matrix(d.latent_dim, d.class_count) = prior.stds.transpose();
    g.arrays["embedding.table"] = std::move(table);
    g.arrays["embedding.noise_scale"] = std::move(scale);
    return g;
}

NetworkParams build_discriminator(const NetworkParams& encoder, int class_count, std::uint64_t seed)
{
    expect_role(encoder, Role::encoder);
    if (class_count != encoder.arch.class_count)
        throw ShapeError("discriminator built for " + std::to_string(class_count) + " classes but descriptor has " +
                         std::to_string(encoder.arch.class_count));
    const auto& d = encoder.arch;
    NetworkParams disc;
    disc.role = Role::discriminator;
    disc.arch = d;
    disc.seed = seed;
    for (const auto& name : encoder_trunk(d).param_names())
        disc.arrays[name] = require(encoder.arrays, name);
    Rng rng(seed);
    auto table = embedding_table(d.class_count, d.label_embedding_dim);
    init_uniform(table, 0.05, rng);
    disc.arrays["label_embedding.table"] = std::move(table);
    discriminator_head(d).init(disc.arrays, rng);
    return disc;
}

Matrix encode(const NetworkParams& encoder, const Tensor& x)
{
    expect_role(encoder, Role::encoder);
    check_input(encoder.arch, x);
    return encoder_stack(encoder.arch).forward(encoder.arrays, x).data;
}

Tensor decode(const NetworkParams& decoder, const Matrix& latent)
{
    expect_role(decoder, Role::decoder);
    if (latent.rows() != decoder.arch.latent_dim)
        throw ShapeError("latent has " + std::to_string(latent.rows()) + " rows, expected " +
                         std::to_string(decoder.arch.latent_dim));
    return decoder_stack(decoder.arch).forward(decoder.arrays, Tensor(latent, 1));
}

Tensor generate(const NetworkParams& generator, const Matrix& z, std::span<const int> labels)
{
    expect_role(generator, Role::generator);
    return GeneratorNet(generator.arch).forward(generator.arrays, z, labels);
}

Matrix discriminate(const NetworkParams& discriminator, const Tensor& x, std::span<const int> labels)
{
    expect_role(discriminator, Role::discriminator);
    return DiscriminatorNet(discriminator.arch).forward(discriminator.arrays, x, labels);
}

GeneratorNet::GeneratorNet(const ArchitectureDescriptor& desc) : desc_(desc), decoder_(decoder_stack(desc)) {}

Tensor GeneratorNet::forward(const ParamSet& params, const Matrix& z, std::span<const int> labels, Pass* pass) const
{
    if (z.rows() != desc_.latent_dim)
        throw ShapeError("noise has " + std::to_string(z.rows()) + " rows, expected " +
                         std::to_string(desc_.latent_dim));
    check_labels(desc_, labels, z.cols());
    const auto table = require(params, "embedding.table").as_matrix(desc_.latent_dim, desc_.class_count);
    const auto scale = require(params, "embedding.noise_scale").as_matrix(desc_.latent_dim, desc_.class_count);
    Matrix h(desc_.latent_dim, z.cols());
    for (Eigen::Index n = 0; n < z.cols(); ++n) {
        const int c = labels[static_cast<std::size_t>(n)];
        h.col(n) = table.col(c) + scale.col(c).cwiseProduct(z.col(n));
    }
    if (pass) {
        pass->z = z;
        pass->labels.assign(labels.begin(), labels.end());
    }
    return decoder_.forward(params, Tensor(std::move(h), 1), pass ? &pass->tape : nullptr);
}

void GeneratorNet::backward(const ParamSet& params, const Pass& pass, const Tensor& dout, GradSet& grads) const
{
    const Tensor dh = decoder_.backward(params, pass.tape, dout, &grads);
    Matrix dtable = Matrix::Zero(desc_.latent_dim, desc_.class_count);
    for (Eigen::Index n = 0; n < dh.data.cols(); ++n)
        dtable.col(pass.labels[static_cast<std::size_t>(n)]) += dh.data.col(n);
    accumulate(grads, "embedding.table", dtable.reshaped());
}

DiscriminatorNet::DiscriminatorNet(const ArchitectureDescriptor& desc)
    : desc_(desc), trunk_(encoder_trunk(desc)), head_(discriminator_head(desc))
{
    const auto plan = plan_shapes(desc);
    trunk_.add(nn::Reshape{plan.flat_features(), 1});
}

Matrix DiscriminatorNet::forward(const ParamSet& params, const Tensor& x, std::span<const int> labels,
                                 Pass* pass) const
{
    check_input(desc_, x);
    check_labels(desc_, labels, x.batch());
    const Tensor features = trunk_.forward(params, x, pass ? &pass->trunk_tape : nullptr);
    const auto table = require(params, "label_embedding.table").as_matrix(desc_.label_embedding_dim, desc_.class_count);
    Matrix fused(features.channels() + desc_.label_embedding_dim, features.data.cols());
    fused.topRows(features.channels()) = features.data;
    for (Eigen::Index n = 0; n < fused.cols(); ++n)
        fused.bottomRows(desc_.label_embedding_dim).col(n) = table.col(labels[static_cast<std::size_t>(n)]);
    const Tensor logits = head_.forward(params, Tensor(std::move(fused), 1), pass ? &pass->head_tape : nullptr);
    Matrix probs = nn::softmax(logits.data);
    if (pass) {
        pass->labels.assign(labels.begin(), labels.end());
        pass->probs = probs;
    }
    return probs;
}

Tensor DiscriminatorNet::backward(const ParamSet& params, const Pass& pass, const Matrix& dlogits,
                                  GradSet* grads) const
{
    const Tensor dfused = head_.backward(params, pass.head_tape, Tensor(dlogits, 1), grads);
    const int features = static_cast<int>(dfused.data.rows()) - desc_.label_embedding_dim;
    if (grads) {
        Matrix dtable = Matrix::Zero(desc_.label_embedding_dim, desc_.class_count);
        for (Eigen::Index n = 0; n < dfused.data.cols(); ++n)
            dtable.col(pass.labels[static_cast<std::size_t>(n)]) += dfused.data.bottomRows(desc_.label_embedding_dim).col(n);
        accumulate(*grads, "label_embedding.table", dtable.reshaped());
    }
    return trunk_.backward(params, pass.trunk_tape, Tensor(dfused.data.topRows(features), 1), grads);
}

std::vector<std::filesystem::path> save_array_file(const std::filesystem::path& dir, const std::string& stem,
                                                   json meta, const ParamSet& arrays)
{
    std::vector<double> flat;
    json table = json::array();
    for (const auto& [name, a] : arrays) {
        if (!a.values.allFinite())
            throw TrainingError("refusing to save non-finite array '" + name + "'");
        table.push_back({{"name", name}, {"shape", a.shape}, {"offset", flat.size()}, {"count", a.values.size()}});
        flat.insert(flat.end(), a.values.begin(), a.values.end());
    }
    const std::string blob = io::encode_f32(flat);
    meta["arrays"] = std::move(table);
    meta["blob"] = stem + ".f32";
    meta["bytes"] = blob.size();
    io::write_file_atomic(dir / (stem + ".f32"), blob);
    io::write_file_atomic(dir / (stem + ".json"), meta.dump(1) + "\n");
    return {dir / (stem + ".f32"), dir / (stem + ".json")};
}

ArrayFile load_array_file(const std::filesystem::path& dir, const std::string& stem)
{
    const auto meta_path = dir / (stem + ".json");
    if (!std::filesystem::exists(meta_path))
        throw MissingArtifactError("missing " + meta_path.string());
    ArrayFile file;
    try {
        file.meta = json::parse(io::read_file(meta_path));
        const std::string blob = io::read_file(dir / file.meta.at("blob").get<std::string>());
        if (blob.size() != file.meta.at("bytes").get<std::size_t>())
            throw FormatError(meta_path.string() + ": blob length " + std::to_string(blob.size()) +
                              " differs from manifest");
        const auto values = io::decode_f32(blob);
        for (const auto& entry : file.meta.at("arrays")) {
            ParamArray a;
            a.shape = entry.at("shape").get<std::vector<int>>();
            const auto offset = entry.at("offset").get<std::size_t>();
            const auto count = entry.at("count").get<std::size_t>();
            if (offset + count > values.size() || static_cast<std::int64_t>(count) != a.size())
                throw FormatError(meta_path.string() + ": array '" + entry.at("name").get<std::string>() +
                                  "' is out of range or disagrees with its shape");
            a.values = Eigen::Map<const Vector>(values.data() + offset, static_cast<Eigen::Index>(count));
            file.arrays[entry.at("name").get<std::string>()] = std::move(a);
        }
    } catch (const json::exception& e) {
        throw FormatError(meta_path.string() + ": " + e.what());
    }
    return file;
}

std::vector<std::filesystem::path> save_checkpoint(const NetworkParams& params, const std::filesystem::path& dir,
                                                   const std::string& stem)
{
    json meta{{"format", "bsdgan-checkpoint"},
              {"role", to_string(params.role)},
              {"descriptor", to_json(params.arch)},
              {"seed", params.seed},
              {"step", params.step}};
    return save_array_file(dir, stem, std::move(meta), params.arrays);
}

NetworkParams load_checkpoint(const std::filesystem::path& dir, const std::string& stem)
{
    auto file = load_array_file(dir, stem);
    NetworkParams p;
    try {
        if (file.meta.value("format", "") != "bsdgan-checkpoint")
            throw FormatError(stem + " is not a checkpoint");
        p.role = role_from_string(file.meta.at("role").get<std::string>());
        p.arch = descriptor_from_json(file.meta.at("descriptor"));
        p.seed = file.meta.at("seed").get<std::uint64_t>();
        p.step = file.meta.at("step").get<std::int64_t>();
    } catch (const json::exception& e) {
        throw FormatError(stem + ": " + e.what());
    }
    const ParamSet expected = parameter_template(p.role, p.arch);
    for (const auto& [name, a] : expected) {
        auto it = file.arrays.find(name);
        if (it == file.arrays.end())
            throw FormatError(stem + ": missing array '" + name + "'");
        if (it->second.shape != a.shape)
            throw FormatError(stem + ": array '" + name + "' has the wrong shape");
    }
    for (const auto& [name, a] : file.arrays)
        if (!expected.count(name))
            throw FormatError(stem + ": unexpected array '" + name + "'");
    p.arrays = std::move(file.arrays);
    return p;
}

} // namespace bsdgan
