#pragma once

#include "bsdgan/layers.hpp"
#include "bsdgan/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace bsdgan {

struct ConvBlock {
    int filters = 0;
    int kernel = 5;
    int stride = 2;

    bool operator==(const ConvBlock&) const = default;
};

/**
 * Shape and width description shared by the autoencoder, generator and
 * discriminator. Conv blocks use padding kernel / 2; the decoder mirrors
 * them with transposed convolutions whose output padding is solved per
 * layer so the reconstruction has exactly `length` samples.
 */
struct ArchitectureDescriptor {
    int channels = 3;
    int length = 0;
    int latent_dim = 100;
    int class_count = 0;
    std::vector<ConvBlock> conv_blocks = {{32, 5, 2}, {64, 5, 2}, {128, 5, 2}};
    double leaky_slope = 0.2;
    int label_embedding_dim = 32;
    int fusion_width = 128;

    bool operator==(const ArchitectureDescriptor&) const = default;
};

struct ShapePlan {
    /// lengths[0] is the input length, lengths[i + 1] the output of conv block i.
    std::vector<int> lengths;
    /// Output padding of the decoder layer that restores lengths[i].
    std::vector<int> output_padding;
    int feature_channels = 0;
    int feature_length = 0;

    int flat_features() const { return feature_channels * feature_length; }
};

/// Throws DescriptorError (listing nearby feasible lengths) if the decoder cannot restore `length` exactly.
ShapePlan plan_shapes(const ArchitectureDescriptor& desc);
std::vector<int> feasible_lengths(const ArchitectureDescriptor& desc, int lo, int hi);
void validate(const ArchitectureDescriptor& desc);

nlohmann::json to_json(const ArchitectureDescriptor& desc);
ArchitectureDescriptor descriptor_from_json(const nlohmann::json& j);

enum class Role { encoder, decoder, generator, discriminator };

std::string to_string(Role role);
Role role_from_string(const std::string& name);

struct NetworkParams {
    Role role = Role::encoder;
    ArchitectureDescriptor arch;
    ParamSet arrays;
    std::uint64_t seed = 0;
    std::int64_t step = 0;
};

// Layer stacks -------------------------------------------------------------------

/// Conv blocks with activations; output [feature_channels, feature_length] per sample.
nn::Sequential encoder_trunk(const ArchitectureDescriptor& desc);
/// Trunk, flatten and the final latent projection ("proj").
nn::Sequential encoder_stack(const ArchitectureDescriptor& desc);
/// Dense "fc" to the feature map, then mirrored transposed convolutions "deconv1".."deconvN".
nn::Sequential decoder_stack(const ArchitectureDescriptor& desc);

/// Expected names and shapes (zero-valued) for a role.
ParamSet parameter_template(Role role, const ArchitectureDescriptor& desc);

// Building and transplanting -----------------------------------------------------

struct Autoencoder {
    NetworkParams encoder;
    NetworkParams decoder;
};

Autoencoder build_autoencoder(const ArchitectureDescriptor& desc, std::uint64_t seed);

struct LatentPrior;

/**
 * Generator = label embedding + noise combination + decoder. The decoder's
 * arrays are copied by name; embedding row c starts at the prior mean of
 * class c and the fixed per-class noise scale is the prior std, so the
 * decoder input is E(c) + sigma_c * z.
 */
NetworkParams build_generator(const NetworkParams& decoder, const LatentPrior& prior, std::uint64_t seed);

/**
 * Discriminator = encoder trunk (latent projection dropped) whose flattened
 * features are concatenated with a label embedding, fused by one dense layer
 * and classified by a (K + 1)-way softmax; index K is FAKE.
 */
NetworkParams build_discriminator(const NetworkParams& encoder, int class_count, std::uint64_t seed);

// Forward ops ----------------------------------------------------------------------

/// Returns [latent_dim, N].
Matrix encode(const NetworkParams& encoder, const Tensor& x);
Tensor decode(const NetworkParams& decoder, const Matrix& latent);
/// `z` is [latent_dim, N]; one label per column.
Tensor generate(const NetworkParams& generator, const Matrix& z, std::span<const int> labels);
/// Returns [K + 1, N]; column n lies on the probability simplex. D(x|c) is entry (c, n).
Matrix discriminate(const NetworkParams& discriminator, const Tensor& x, std::span<const int> labels);

/// Index of the FAKE output for a descriptor.
inline int fake_index(const ArchitectureDescriptor& desc) { return desc.class_count; }

// Differentiable passes used by training ---------------------------------------------

class GeneratorNet {
public:
    struct Pass {
        nn::Tape tape;
        Matrix z;
        std::vector<int> labels;
    };

    explicit GeneratorNet(const ArchitectureDescriptor& desc);

    Tensor forward(const ParamSet& params, const Matrix& z, std::span<const int> labels, Pass* pass = nullptr) const;
    /// Accumulates gradients for the decoder arrays and `embedding.table`.
    void backward(const ParamSet& params, const Pass& pass, const Tensor& dout, GradSet& grads) const;

private:
    ArchitectureDescriptor desc_;
    nn::Sequential decoder_;
};

class DiscriminatorNet {
public:
    struct Pass {
        nn::Tape trunk_tape;
        nn::Tape head_tape;
        std::vector<int> labels;
        Matrix probs;
    };

    explicit DiscriminatorNet(const ArchitectureDescriptor& desc);

    /// Softmax probabilities [K + 1, N].
    Matrix forward(const ParamSet& params, const Tensor& x, std::span<const int> labels, Pass* pass = nullptr) const;
    /// Backpropagates dL/dlogits; returns dL/dx. Parameter gradients only when `grads` is non-null.
    Tensor backward(const ParamSet& params, const Pass& pass, const Matrix& dlogits, GradSet* grads) const;

    const ArchitectureDescriptor& descriptor() const { return desc_; }

private:
    ArchitectureDescriptor desc_;
    nn::Sequential trunk_;
    nn::Sequential head_;
};

// Array files and checkpoints --------------------------------------------------------

/// `<stem>.json` (metadata + array table) and `<stem>.f32` (concatenated little-endian float32 arrays).
std::vector<std::filesystem::path> save_array_file(const std::filesystem::path& dir, const std::string& stem,
                                                   nlohmann::json meta, const ParamSet& arrays);

struct ArrayFile {
    nlohmann::json meta;
    ParamSet arrays;
};

ArrayFile load_array_file(const std::filesystem::path& dir, const std::string& stem);

std::vector<std::filesystem::path> save_checkpoint(const NetworkParams& params, const std::filesystem::path& dir,
                                                   const std::string& stem);

/// Loads and checks every array name and shape against the role's template.
NetworkParams load_checkpoint(const std::filesystem::path& dir, const std::string& stem);

} // namespace bsdgan
