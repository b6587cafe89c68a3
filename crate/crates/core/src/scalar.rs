use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point element type shared by every tensor, network and loss.
///
/// Implemented for `f32` and `f64`. Matrix products dispatch to the
/// matching `matrixmultiply` kernel.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Width in bytes of the little-endian encoding.
    const BYTES: usize;

    /// Converts an `f64` literal into this type.
    fn lit(v: f64) -> Self;

    /// Widens to `f64` (lossless for both implementors).
    fn as_f64(self) -> f64;

    /// `c = alpha * a · b + beta * c` on strided row/column layouts.
    ///
    /// Slices must be large enough for the given dimensions and strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

fn span(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs.unsigned_abs() + (cols - 1) * cs.unsigned_abs() + 1
    }
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:path, $bytes:expr) => {
        impl Scalar for $t {
            const BYTES: usize = $bytes;

            #[inline]
            fn lit(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0 && rsc >= 0 && csc >= 0);
                assert!(
                    a.len() >= span(m, k, rsa, csa),
                    "gemm: lhs buffer too small"
                );
                assert!(
                    b.len() >= span(k, n, rsb, csb),
                    "gemm: rhs buffer too small"
                );
                assert!(
                    c.len() >= span(m, n, rsc, csc),
                    "gemm: output buffer too small"
                );
                // SAFETY: all strides are non-negative and every buffer was checked
                // to cover the furthest element addressed by the kernel.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; $bytes];
                buf.copy_from_slice(&bytes[..$bytes]);
                <$t>::from_le_bytes(buf)
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm, 4);
impl_scalar!(f64, matrixmultiply::dgemm, 8);
