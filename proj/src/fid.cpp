#include "bsdgan/fid.hpp"

#include "bsdgan/errors.hpp"

#include <Eigen/Eigenvalues>

#include <cstdio>
#include <limits>
#include <numeric>

namespace bsdgan {

using nlohmann::json;

namespace {

struct Moments {
    Vector mean;
    Matrix cov;
};

Moments moments_of(const Matrix& f)
{
    Moments m;
    m.mean = f.rowwise().mean();
    const Matrix centered = f.colwise() - m.mean;
    m.cov = centered * centered.transpose() / static_cast<double>(f.cols() - 1);
    return m;
}

// Square root of a symmetric PSD matrix; negative eigenvalues are clamped.
Matrix sqrt_psd(const Matrix& s)
{
    Eigen::SelfAdjointEigenSolver<Matrix> es(s);
    const Vector ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

std::vector<std::size_t> first_of_class(const LabeledDataset& ds, int label, std::int64_t cap)
{
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.labels.size() && static_cast<std::int64_t>(idx.size()) < cap; ++i)
        if (ds.labels[i] == label)
            idx.push_back(i);
    return idx;
}

} // namespace

double fid(const Matrix& a, const Matrix& b, Warnings* warnings)
{
    if (a.rows() != b.rows())
        throw ShapeError("fid: feature dimensions differ (" + std::to_string(a.rows()) + " vs " +
                         std::to_string(b.rows()) + ")");
    if (a.cols() < 2 || b.cols() < 2)
        throw Error("fid needs at least 2 vectors on each side");
    if (!a.allFinite() || !b.allFinite())
        throw Error("fid: non-finite features");
    const Moments ma = moments_of(a), mb = moments_of(b);
    const Matrix root_a = sqrt_psd(ma.cov);
    Matrix product = root_a * mb.cov * root_a;
    product = 0.5 * (product + product.transpose());
    const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(product, Eigen::EigenvaluesOnly).eigenvalues();
    double negative = 0, total = 0, trace_root = 0;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        total += std::abs(ev(i));
        if (ev(i) < 0)
            negative -= ev(i);
        else
            trace_root += std::sqrt(ev(i));
    }
    if (warnings && total > 0 && negative / total > fid_clamp_warning_fraction) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "fid: clamped %.2f%% of the eigen-mass in the matrix square root",
                      100.0 * negative / total);
        warnings->push_back(buf);
    }
    const double value =
        (ma.mean - mb.mean).squaredNorm() + ma.cov.trace() + mb.cov.trace() - 2.0 * trace_root;
    return std::max(value, 0.0);
}

FeatureExtractor::FeatureExtractor(NetworkParams encoder)
    : encoder_(std::move(encoder)), trunk_(encoder_trunk(encoder_.arch))
{
    if (encoder_.role != Role::encoder && encoder_.role != Role::discriminator)
        throw Error("feature extractor needs an encoder or discriminator checkpoint");
}

int FeatureExtractor::dim() const { return plan_shapes(encoder_.arch).feature_channels; }

Matrix FeatureExtractor::features(const Tensor& batch) const
{
    const Tensor h = trunk_.forward(encoder_.arrays, batch);
    Matrix out(h.channels(), h.batch());
    for (int n = 0; n < h.batch(); ++n)
        out.col(n) = h.sample(n).rowwise().mean();
    return out;
}

Matrix FeatureExtractor::features(const LabeledDataset& ds, const std::vector<std::size_t>& indices) const
{
    std::vector<std::size_t> all = indices;
    if (all.empty()) {
        all.resize(ds.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
    }
    Matrix out(dim(), static_cast<Eigen::Index>(all.size()));
    constexpr std::size_t chunk = 256;
    for (std::size_t start = 0; start < all.size(); start += chunk) {
        const std::vector<std::size_t> part(all.begin() + static_cast<std::ptrdiff_t>(start),
                                            all.begin() + static_cast<std::ptrdiff_t>(std::min(all.size(), start + chunk)));
        out.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(part.size())) =
            features(ds.to_tensor(part));
    }
    return out;
}

bool ClassFid::between() const { return generated && best && worst && *best < *generated && *generated < *worst; }

FidReport fid_protocol(const LabeledDataset& generated, const LabeledDataset& train, const LabeledDataset& val,
                       const Autoencoder& autoencoder, const FeatureExtractor& extractor,
                       const FidProtocolConfig& config)
{
    for (const auto* ds : {&train, &val})
        for (const auto& w : ds->windows)
            if (w.synthetic)
                throw Error("fid_protocol: synthetic window among the real references");
    FidReport report;
    report.feature_dim = extractor.dim();
    const int d = report.feature_dim;

    LabeledDataset recon = train;
    {
        const Tensor x_hat = reconstruct(autoencoder, train.to_tensor());
        for (std::size_t i = 0; i < recon.size(); ++i)
            recon.windows[i].values = x_hat.sample(static_cast<int>(i));
    }
    const Matrix val_all = extractor.features(val);
    const Matrix train_all = extractor.features(train);
    const Matrix recon_all = extractor.features(recon);
    report.best = fid(train_all, val_all, &report.warnings);
    report.worst = fid(recon_all, val_all, &report.warnings);

    const auto none = std::numeric_limits<std::int64_t>::max();
    for (int c = 0; c < train.class_count(); ++c) {
        ClassFid entry;
        entry.label = c;
        entry.name = train.class_names[static_cast<std::size_t>(c)];
        const auto val_idx = first_of_class(val, c, none);
        const auto train_idx = first_of_class(train, c, none);
        entry.val_samples = static_cast<std::int64_t>(val_idx.size());
        if (val_idx.size() < 2) {
            entry.note = "skipped: fewer than 2 val windows";
            report.classes.push_back(entry);
            continue;
        }
        if (train_idx.size() < 2) {
            entry.note = "skipped: fewer than 2 train windows";
            report.classes.push_back(entry);
            continue;
        }
        const std::int64_t cap = config.match_train_counts ? static_cast<std::int64_t>(train_idx.size()) : none;
        const auto gen_idx = first_of_class(generated, c, cap);
        entry.samples = static_cast<std::int64_t>(train_idx.size());
        Warnings w;
        const Matrix val_f = extractor.features(val, val_idx);
        entry.best = fid(extractor.features(train, train_idx), val_f, &w);
        entry.worst = fid(extractor.features(recon, train_idx), val_f, &w);
        if (gen_idx.size() >= 2)
            entry.generated = fid(extractor.features(generated, gen_idx), val_f, &w);
        else
            entry.note = "no generated windows";
        if (config.match_train_counts && gen_idx.size() < train_idx.size() && gen_idx.size() >= 2)
            entry.note = "only " + std::to_string(gen_idx.size()) + " generated windows";
        if (std::min<std::int64_t>(entry.samples, entry.val_samples) < d)
            w.push_back(entry.name + ": fewer samples than feature dimensions (" + std::to_string(d) + ")");
        if (*entry.best > *entry.worst)
            w.push_back(entry.name + ": best reference exceeds worst reference");
        for (auto& s : w)
            report.warnings.push_back(std::move(s));
        report.classes.push_back(entry);
    }
    if (report.best > report.worst)
        report.warnings.push_back("pooled best reference exceeds worst reference");
    return report;
}

json to_json(const FidReport& report)
{
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    json classes = json::array();
    for (const auto& c : report.classes)
        classes.push_back({{"label", c.label},
                           {"name", c.name},
                           {"generated", opt(c.generated)},
                           {"best", opt(c.best)},
                           {"worst", opt(c.worst)},
                           {"between", c.between()},
                           {"samples", c.samples},
                           {"val_samples", c.val_samples},
                           {"note", c.note}});
    return {{"feature_dim", report.feature_dim},
            {"best", report.best},
            {"worst", report.worst},
            {"classes", classes},
            {"warnings", report.warnings}};
}

std::string fid_table(const FidReport& report)
{
    auto cell = [](const std::optional<double>& v) {
        char buf[32];
        if (!v)
            return std::string("-");
        std::snprintf(buf, sizeof buf, "%.4f", *v);
        return std::string(buf);
    };
    std::string out = "class\treal data (best)\tBSDGAN\tautoencoder (worst)\tn\n";
    for (const auto& c : report.classes)
        out += c.name + "\t" + cell(c.best) + "\t" + cell(c.generated) + "\t" + cell(c.worst) + "\t" +
               std::to_string(c.samples) + (c.note.empty() ? "" : "\t" + c.note) + "\n";
    out += "all\t" + cell(report.best) + "\t-\t" + cell(report.worst) + "\n";
    return out;
}

} // namespace bsdgan
