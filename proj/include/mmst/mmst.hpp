#pragma once

#include "mmst/autograd.hpp"
#include "mmst/calendar.hpp"
#include "mmst/checkpoint.hpp"
#include "mmst/config.hpp"
#include "mmst/context.hpp"
#include "mmst/data.hpp"
#include "mmst/decomposition.hpp"
#include "mmst/error.hpp"
#include "mmst/external.hpp"
#include "mmst/flow_tensor.hpp"
#include "mmst/fusion_attention.hpp"
#include "mmst/gradcheck.hpp"
#include "mmst/losses_metrics.hpp"
#include "mmst/model.hpp"
#include "mmst/params.hpp"
#include "mmst/pipeline.hpp"
#include "mmst/plot.hpp"
#include "mmst/stdgcrn.hpp"
#include "mmst/synthetic.hpp"
#include "mmst/temporal_enhance.hpp"
#include "mmst/train.hpp"
