#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vitforge/metrics.hpp"
#include "vitforge/train.hpp"

namespace vitforge {

inline constexpr const char* kCurvesHeader =
    "epoch,train_loss,train_acc,val_loss,val_acc,val_precision_macro,val_recall_macro";

/// Header line plus one row per record; reals in shortest round-trip form.
std::string curves_csv(std::span<const EpochRecord> history);
/// Inverse of curves_csv. Throws std::runtime_error on a malformed table.
std::vector<EpochRecord> parse_curves_csv(const std::string& text);

/// Header row and first column hold class names; cell (i, j) counts true
/// class i predicted as j.
std::string confusion_csv(const ConfusionMatrix& cm);
ConfusionMatrix parse_confusion_csv(const std::string& text);

/// Heatmap with counts written in every cell.
std::string confusion_svg(const ConfusionMatrix& cm, const std::string& title);
/// Loss and accuracy panels over epochs, training and validation.
std::string curves_svg(std::span<const EpochRecord> history);

std::string read_text_file(const std::filesystem::path& path);
/// Replaces `path` via a temporary sibling file.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace vitforge
