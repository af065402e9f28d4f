use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MemoryQuery {
    pub t: u64,
    pub h: u64,
    pub w: u64,
    pub c: u64,
    pub bytes_per_scalar: u64,
    /// Active voxels.
    pub m: u64,
    pub coord_bytes: u64,
    pub feat_bytes: u64,
    pub header_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MemoryEstimate {
    pub dense_bytes: u64,
    pub sparse_bytes: u64,
    pub ratio: f64,
}

/// `dense = T H W C bytes`; `sparse = M (coord + C feat) + header`.
pub fn memory_calculator(q: &MemoryQuery) -> MemoryEstimate {
    let dense_bytes = q.t * q.h * q.w * q.c * q.bytes_per_scalar;
    let sparse_bytes = q.m * (q.coord_bytes + q.c * q.feat_bytes) + q.header_bytes;
    MemoryEstimate {
        dense_bytes,
        sparse_bytes,
        ratio: if sparse_bytes == 0 {
            f64::INFINITY
        } else {
            dense_bytes as f64 / sparse_bytes as f64
        },
    }
}

/// A published compression figure next to the configuration that comes
/// closest to it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PublishedFigure {
    pub label: &'static str,
    pub claimed_ratio: f64,
    pub configuration: &'static str,
    pub estimate: MemoryEstimate,
    /// `|computed - claimed| / claimed`.
    pub relative_gap: f64,
}

fn figure(label: &'static str, claimed: f64, configuration: &'static str, sparse_bytes: u64) -> PublishedFigure {
    let dense = memory_calculator(&dense_reference()).dense_bytes;
    let ratio = dense as f64 / sparse_bytes as f64;
    PublishedFigure {
        label,
        claimed_ratio: claimed,
        configuration,
        estimate: MemoryEstimate {
            dense_bytes: dense,
            sparse_bytes,
            ratio,
        },
        relative_gap: (ratio - claimed).abs() / claimed,
    }
}

/// `16 x 640 x 640 x 3` float32, the published dense reference (78.6 MB).
fn dense_reference() -> MemoryQuery {
    MemoryQuery {
        t: 16,
        h: 640,
        w: 640,
        c: 3,
        bytes_per_scalar: 4,
        m: 0,
        coord_bytes: 0,
        feat_bytes: 0,
        header_bytes: 0,
    }
}

/// Reconciliation of the published memory and storage ratios against the
/// 78,643,200-byte dense reference.
pub fn published_figures() -> Vec<PublishedFigure> {
    let q = MemoryQuery {
        m: 14_900,
        coord_bytes: 6,
        feat_bytes: 0,
        ..dense_reference()
    };
    vec![
        figure(
            "GPU memory, 858x",
            858.0,
            "14,900 voxels x 6 bytes (three 16-bit coordinates, features not counted)",
            memory_calculator(&q).sparse_bytes,
        ),
        figure("GPU memory, 94 KB per frame", 858.0, "94,000 bytes as stated", 94_000),
        figure("storage, 3,670x", 3670.0, "22,000 bytes per sample as stated", 22_000),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_reference_bytes() {
        assert_eq!(memory_calculator(&dense_reference()).dense_bytes, 78_643_200);
        let empty = memory_calculator(&MemoryQuery {
            header_bytes: 36,
            ..dense_reference()
        });
        assert_eq!(empty.sparse_bytes, 36);
        assert!(empty.ratio.is_finite());
    }
}
