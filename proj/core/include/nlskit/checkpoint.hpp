#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nlskit/classifier.hpp"

namespace nlskit {

// NLSMDL01 checkpoint layout (all integers little-endian):
//
//   0  char[8]  "NLSMDL01"
//   8  u32      format version (1)
//  12  u32      input_layers
//  16  u32      input_dim
//  20  u32      conv_channels
//  24  u32      conv_layers
//  28  u32      conv_kernel
//  32  u32      fc_hidden
//  36  u32      n_classes
//  40  f32      dropout_p
//  44  u32      best_epoch
//  48  u64      byte offset of the training-log footer
//  56  u64      byte length of the training-log footer
//  64  f32[]    parameter blocks in BasicModelParams order
//  ..  UTF-8    TSV footer: epoch, train_loss, val_loss, val_f1

std::vector<std::uint8_t> encode_checkpoint(const TrainedModel& model);
TrainedModel decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source_name = "<memory>");

void write_checkpoint(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel read_checkpoint(const std::filesystem::path& path);

}  // namespace nlskit
